"""End-to-end command line: generate data, train, evaluate, report.

Subcommands: generate, train, eval, report. Flags can also be supplied via
--config JSON (flags win). Exit codes: 0 success, 1 usage error, 2 runtime
or numerical failure. EQUIAVG_WORKERS sets trajectory-level parallelism in
eval; everything else is explicit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import groups, metrics
from .averaging import AveragingConfig, RolloutDivergenceError, rollout
from .fields import FieldError, GridSpec, Window, save_trajectory
from .groups import GroupError
from .metrics import LossRow
from .simulate import (
    InitialConditionSpec,
    SimulationError,
    load_dataset,
    make_dataset,
    stable_params,
)
from .stencil import (
    ModelFormatError,
    ModelMismatchError,
    StencilModel,
    StencilModelConfig,
    TrainConfig,
    TrainingDivergedError,
    load_model,
    save_model,
    train,
)


class CliError(Exception):
    """Bad arguments or missing inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1) from None


GENERATE_DEFAULTS = {
    "grid": 64, "trajectories": 20, "frames": 200, "seed": 7,
    "test_fraction": 0.1, "ic": "fourier", "feed": 0.028, "kill": 0.062,
    "diff_a": 2e-5, "diff_b": 1e-5, "substeps": 10, "margin": 2.0,
    "dtype": "float32", "modes": 8, "count": 12, "width": 3.0,
    "amplitude": 0.8, "out": None,
}

TRAIN_DEFAULTS = {
    "data": None, "out": None, "k": 4, "patch": 2, "hidden": 64,
    "model_seed": 0, "residual": False, "lr": 0.05, "epochs": 40,
    "batch": 4096, "momentum": 0.9, "windows_per_epoch": 40, "seed": 0,
    "loss_csv": None,
}

EVAL_DEFAULTS = {
    "data": None, "model": None, "out": None, "groups": "",
    "starts": "10,50", "horizon": 15, "rollout_steps": 15, "seed": 0,
    "include_flagged": False, "dump_fields": False,
}

REPORT_DEFAULTS = {
    "losses": None, "rollout": None, "steps": "1,5,10", "out": None,
}


def _add_generate(sub):
    p = sub.add_parser("generate", help="simulate and persist a dataset")
    p.add_argument("--out", help="dataset output directory")
    p.add_argument("--grid", type=int, help="square grid size")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--ic", choices=["fourier", "clusters"])
    p.add_argument("--feed", type=float)
    p.add_argument("--kill", type=float)
    p.add_argument("--diff-a", type=float, dest="diff_a")
    p.add_argument("--diff-b", type=float, dest="diff_b")
    p.add_argument("--substeps", type=int)
    p.add_argument("--margin", type=float, help="stability margin for dt")
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--modes", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--width", type=float)
    p.add_argument("--amplitude", type=float)
    p.set_defaults(func=cmd_generate, defaults=GENERATE_DEFAULTS)


def _add_train(sub):
    p = sub.add_parser("train", help="fit the stencil surrogate on a dataset")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="model output file")
    p.add_argument("--k", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--model-seed", type=int, dest="model_seed")
    p.add_argument("--residual", action="store_true", default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--windows-per-epoch", type=int, dest="windows_per_epoch")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-csv", dest="loss_csv")
    p.set_defaults(func=cmd_train, defaults=TRAIN_DEFAULTS)


def _add_eval(sub):
    p = sub.add_parser("eval", help="rollout baseline and averaged variants")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--out", help="output directory for CSVs")
    p.add_argument("--groups", help="comma list, e.g. d4,torus:mc:n=1")
    p.add_argument("--starts", help="comma list of start offsets")
    p.add_argument("--horizon", type=int)
    p.add_argument("--rollout-steps", type=int, dest="rollout_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--include-flagged", action="store_true", default=None,
                   dest="include_flagged")
    p.add_argument("--dump-fields", action="store_true", default=None,
                   dest="dump_fields")
    p.set_defaults(func=cmd_eval, defaults=EVAL_DEFAULTS)


def _add_report(sub):
    p = sub.add_parser("report", help="render loss CSVs as a Markdown table")
    p.add_argument("--losses", help="aggregated losses CSV")
    p.add_argument("--rollout", help="rollout sums CSV")
    p.add_argument("--steps", help="comma list of step columns")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_report, defaults=REPORT_DEFAULTS)


def _build_parser() -> _Parser:
    parser = _Parser(prog="equiavg")
    parser.add_argument("--config", help="JSON file with per-flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_report(sub)
    return parser


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from --config, then from hard defaults (flags win)."""
    overrides = {}
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            raise CliError(f"config file not found: {config_path}")
        overrides = json.loads(config_path.read_text())
    for key, default in args.defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, overrides.get(key, default))
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            raise CliError(f"--{name.replace('_', '-')} is required")


def parse_variant(token: str, grid: GridSpec) -> tuple[str, AveragingConfig]:
    """One --groups token: kind[:mc[:n=N][:seed=S]] -> (label, config)."""
    parts = token.strip().split(":")
    kind = parts[0]
    try:
        spec = groups.group_for_grid(kind, grid)
    except GroupError as exc:
        raise CliError(str(exc)) from None
    if len(parts) == 1 or parts[1] == "full":
        return kind, AveragingConfig(spec, mode="full")
    if parts[1] != "mc":
        raise CliError(f"unknown averaging mode {parts[1]!r} in {token!r}")
    n, seed = 1, 0
    for extra in parts[2:]:
        key, _, value = extra.partition("=")
        if key == "n":
            n = int(value)
        elif key == "seed":
            seed = int(value)
        else:
            raise CliError(f"unknown option {extra!r} in {token!r}")
    return f"{kind}-mc{n}", AveragingConfig(spec, mode="mc", n=n, seed=seed)


def cmd_generate(args) -> int:
    _require(args, "out")
    n = args.grid
    grid = GridSpec(n, n, 1.0 / n, 1.0 / n)
    params = stable_params(grid, margin=args.margin, d_a=args.diff_a,
                           d_b=args.diff_b, feed=args.feed, kill=args.kill,
                           substeps=args.substeps)
    kind = "random-fourier" if args.ic == "fourier" else "gaussian-clusters"
    ic = InitialConditionSpec(kind=kind, modes=args.modes, count=args.count,
                              width=args.width, amplitude=args.amplitude)
    dataset = make_dataset(
        args.out, grid, params, ic, n_traj=args.trajectories,
        frames=args.frames, master_seed=args.seed,
        test_fraction=args.test_fraction, dtype=np.dtype(args.dtype),
    )
    m = dataset.manifest
    print(f"dataset: {args.out}")
    print(f"  grid {n}x{n}, {m['frames']} frames, dt {params.dt:g} x {params.substeps} substeps")
    print(f"  split: {len(m['train'])} train / {len(m['test'])} test")
    print(f"  flagged steady-state: {len(m['flagged'])} {m['flagged']}")
    return 0


def cmd_train(args) -> int:
    _require(args, "data", "out")
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"dataset not found: {data_path}")
    dataset = load_dataset(data_path)
    grid = GridSpec(**dataset.manifest["grid"])
    model_cfg = StencilModelConfig(k=args.k, patch=args.patch,
                                   hidden=args.hidden, seed=args.model_seed,
                                   residual=bool(args.residual))
    train_cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                            momentum=args.momentum,
                            windows_per_epoch=args.windows_per_epoch,
                            seed=args.seed)
    if train_cfg.lr == 0:
        print("warning: --lr 0 leaves the model parameters unchanged",
              file=sys.stderr)
    trajectories = [t for _, t in dataset.load_split("train")]
    if not trajectories:
        raise CliError("dataset has no training trajectories")
    model = StencilModel(model_cfg, grid, trajectories[0].schema)
    curve = train(model, trajectories, train_cfg)
    save_model(model, args.out)
    loss_csv = args.loss_csv or (str(args.out) + ".loss.csv")
    with open(loss_csv, "w") as fh:
        fh.write("epoch,mse\n")
        for i, value in enumerate(curve):
            fh.write(f"{i},{value!r}\n")
    if curve:
        print(f"trained {model.param_count()} parameters: "
              f"epoch-0 mse {curve[0]:.6g} -> final {curve[-1]:.6g}")
    print(f"model: {args.out}")
    print(f"loss curve: {loss_csv}")
    return 0


def _eval_one_trajectory(model, truth, name, variants, starts, horizon,
                         seed, base_out, dump_fields):
    """All (start, variant) rollouts for one test trajectory."""
    rows: list[LossRow] = []
    exclusions: list[tuple[str, int, str, str]] = []
    k = model.config.k
    for si, start in enumerate(starts):
        init = Window(truth.frames[start - k + 1: start + 1])
        for vi, (label, cfg) in enumerate(variants):
            rng = np.random.default_rng([seed, hash_name(name), si, vi])
            try:
                result = rollout(model, init, horizon, cfg, rng, dt=truth.dt)
            except RolloutDivergenceError as exc:
                exclusions.append((label, start, name, f"diverged at step {exc.step}"))
                continue
            rows.extend(metrics.evaluate_rollout(result.predicted, truth,
                                                 label, name, start))
            if dump_fields:
                dump_dir = base_out / "fields" / label / f"start{start:03d}" / name
                save_trajectory(result.predicted, dump_dir / "pred")
                truth_slice = type(truth)(
                    truth.grid, truth.schema,
                    truth.frames[start + 1: start + 1 + horizon], truth.dt,
                )
                save_trajectory(truth_slice, dump_dir / "truth")
    return rows, exclusions


def hash_name(name: str) -> int:
    """Stable small integer from a trajectory name (process-independent)."""
    return sum((i + 1) * ord(c) for i, c in enumerate(name)) % 100003


def cmd_eval(args) -> int:
    _require(args, "data", "model", "out")
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"dataset not found: {data_path}")
    model_path = Path(args.model)
    if not model_path.exists():
        raise CliError(f"model not found: {model_path}")
    dataset = load_dataset(data_path)
    model = load_model(model_path)
    grid = GridSpec(**dataset.manifest["grid"])
    if model.grid != grid:
        raise CliError("model grid does not match the dataset grid")

    starts = [int(s) for s in str(args.starts).split(",") if s != ""]
    if not starts:
        raise CliError("--starts must list at least one offset")
    horizon = args.horizon
    frames = dataset.manifest["frames"]
    k = model.config.k
    for start in starts:
        if start - k + 1 < 0:
            raise CliError(f"start {start} needs at least {k} leading frames")
        if start + horizon > frames - 1:
            raise CliError(
                f"start {start} + horizon {horizon} exceeds the {frames}-frame trajectories"
            )
    if args.rollout_steps > horizon:
        raise CliError("rollout-steps cannot exceed the horizon")

    variants: list[tuple[str, AveragingConfig | None]] = [("baseline", None)]
    if args.groups:
        for token in str(args.groups).split(","):
            if token.strip():
                variants.append(parse_variant(token, grid))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    exclusions: list[tuple[str, int, str, str]] = []
    test_items = []
    for name in dataset.test_names:
        if not args.include_flagged and name in dataset.flagged:
            exclusions.append(("*", -1, name, "steady-state"))
            continue
        test_items.append(name)
    if not test_items:
        raise CliError("no evaluable test trajectories (all flagged?)")

    workers = int(os.environ.get("EQUIAVG_WORKERS", "1"))

    def job(name):
        return _eval_one_trajectory(model, dataset.load(name), name, variants,
                                    starts, horizon, args.seed, out_dir,
                                    args.dump_fields)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, test_items))
    else:
        results = [job(name) for name in test_items]

    rows: list[LossRow] = []
    for traj_rows, traj_excl in results:
        rows.extend(traj_rows)
        exclusions.extend(traj_excl)
    if not rows:
        raise SimulationError("every rollout diverged; nothing to aggregate")

    agg = metrics.aggregate(rows)
    sums = {}
    for variant, _ in variants:
        for start in starts:
            selected = [r for r in agg if r.variant == variant and r.start == start]
            if selected:
                sums[(variant, start)] = metrics.rollout_sum(selected, args.rollout_steps)

    metrics.write_losses_csv(out_dir / "losses.csv", agg)
    metrics.write_losses_csv(out_dir / "losses_by_trajectory.csv", rows,
                             with_trajectory=True)
    metrics.write_rollout_csv(out_dir / "rollout_sums.csv", sums)
    with open(out_dir / "exclusions.csv", "w") as fh:
        fh.write("variant,start,trajectory,reason\n")
        for variant, start, name, reason in exclusions:
            fh.write(f"{variant},{start},{name},{reason}\n")

    print(f"evaluated {len(test_items)} trajectories x {len(starts)} starts "
          f"x {len(variants)} variants")
    for (variant, start), value in sums.items():
        print(f"  rollout {variant} @ start {start}: {value:.6g}")
    print(f"results: {out_dir}")
    return 0


def cmd_report(args) -> int:
    _require(args, "losses", "rollout")
    for path in (args.losses, args.rollout):
        if not Path(path).exists():
            raise CliError(f"file not found: {path}")
    try:
        rows = metrics.read_losses_csv(args.losses)
        sums = metrics.read_rollout_csv(args.rollout)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    steps = tuple(int(s) for s in str(args.steps).split(",") if s != "")
    text = metrics.markdown_report(rows, sums, steps)
    if args.out:
        Path(args.out).write_text(text)
        print(f"report: {args.out}")
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _resolve(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FieldError, GroupError, SimulationError, ModelFormatError,
            ModelMismatchError, TrainingDivergedError, RolloutDivergenceError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
