"""Variance-scaled error metric and loss-table reporting.

vrmse(pred, truth) is the RMS error normalized by the spatial variance of
the truth (plus a small epsilon); values near or above 1 mean the prediction
is no better than the truth's constant spatial mean. Multi-component
channels are scored as single variables: squared errors and variances sum
over components before spatial averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldSet, Trajectory

EPSILON = 1e-7
ROLLOUT_STEPS = 15


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = EPSILON
    rollout_steps: int = ROLLOUT_STEPS
    starts: tuple[int, ...] = (10, 50)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be at least 1")


@dataclass(frozen=True)
class LossRow:
    variant: str
    trajectory: str
    start: int
    step: int       # 1-based steps after the initial window
    variable: str
    value: float


def vrmse(pred: np.ndarray, truth: np.ndarray, eps: float = EPSILON) -> float:
    """Variance-scaled RMS error of one channel.

    Arrays are [components, ny, nx] (a bare [ny, nx] plane is promoted);
    the second argument is the ground truth whose variance scales the error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    if truth.ndim == 2:
        truth = truth[None]
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    err = np.mean(((pred - truth) ** 2).sum(axis=0))
    mean = truth.mean(axis=(1, 2))
    var = np.mean(((truth - mean[:, None, None]) ** 2).sum(axis=0))
    return float(np.sqrt(err / (var + eps)))


def vrmse_fields(pred: FieldSet, truth: FieldSet, channel: str,
                 eps: float = EPSILON) -> float:
    return vrmse(pred.channel_data(channel), truth.channel_data(channel), eps)


def evaluate_rollout(pred: Trajectory, truth: Trajectory, variant: str,
                     trajectory: str, start: int,
                     eps: float = EPSILON) -> list[LossRow]:
    """Per-step, per-variable rows for one rollout against the truth.

    Predicted frames must line up with truth time indices; step numbers
    count from 1 at the first predicted frame.
    """
    if pred.schema != truth.schema:
        raise ValueError("prediction and truth have different schemas")
    truth_by_index = {f.time_index: f for f in truth.frames}
    rows = []
    for step, frame in enumerate(pred.frames, start=1):
        ref = truth_by_index.get(frame.time_index)
        if ref is None:
            raise ValueError(
                f"truth has no frame for predicted time index {frame.time_index}"
            )
        for group in pred.schema:
            rows.append(LossRow(
                variant, trajectory, start, step, group.name,
                vrmse_fields(frame, ref, group.name, eps),
            ))
    return rows


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def rollout_sum(rows: list[LossRow], steps: int = ROLLOUT_STEPS) -> float:
    """Sum over the first ``steps`` steps of the per-step mean over variables.

    fsum keeps the short sums correctly rounded, so constructed fixtures
    (e.g. fifteen exact 0.1 entries) total exactly.
    """
    by_step: dict[int, list[float]] = {}
    for row in rows:
        by_step.setdefault(row.step, []).append(row.value)
    missing = [s for s in range(1, steps + 1) if s not in by_step]
    if missing:
        raise ValueError(f"rollout is missing steps {missing}")
    return math.fsum(_mean(by_step[s]) for s in range(1, steps + 1))


def aggregate(rows: list[LossRow], exclude: set[str] | frozenset[str] = frozenset()
              ) -> list[LossRow]:
    """Mean over trajectories per (variant, start, step, variable).

    Trajectories named in ``exclude`` are removed from the denominator.
    Aggregated rows carry trajectory name "mean". Raises on empty input.
    """
    kept = [r for r in rows if r.trajectory not in exclude]
    if not kept:
        raise ValueError("nothing to aggregate")
    order: list[tuple] = []
    cells: dict[tuple, list[float]] = {}
    for row in kept:
        key = (row.variant, row.start, row.step, row.variable)
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(row.value)
    return [
        LossRow(variant, "mean", start, step, variable, _mean(cells[key]))
        for key in order
        for (variant, start, step, variable) in [key]
    ]


def rollout_sums_by_key(rows: list[LossRow],
                        steps: int = ROLLOUT_STEPS) -> dict[tuple[str, int, str], float]:
    """Rollout sums keyed by (variant, start, trajectory)."""
    grouped: dict[tuple[str, int, str], list[LossRow]] = {}
    for row in rows:
        grouped.setdefault((row.variant, row.start, row.trajectory), []).append(row)
    return {key: rollout_sum(group, steps) for key, group in grouped.items()}


def write_losses_csv(path, rows: list[LossRow], with_trajectory: bool = False) -> None:
    lines = []
    if with_trajectory:
        lines.append("variant,start,trajectory,step,variable,vrmse")
        for r in rows:
            lines.append(f"{r.variant},{r.start},{r.trajectory},{r.step},{r.variable},{r.value!r}")
    else:
        lines.append("variant,start,step,variable,vrmse")
        for r in rows:
            lines.append(f"{r.variant},{r.start},{r.step},{r.variable},{r.value!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_rollout_csv(path, sums: dict[tuple[str, int], float]) -> None:
    lines = ["variant,start,rollout_sum"]
    for (variant, start), value in sums.items():
        lines.append(f"{variant},{start},{value!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_losses_csv(path) -> list[LossRow]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) <= 1:
        raise ValueError(f"no rows in {path}")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        record = dict(zip(header, line.split(",")))
        rows.append(LossRow(
            record["variant"], record.get("trajectory", "mean"),
            int(record["start"]), int(record["step"]), record["variable"],
            float(record["vrmse"]),
        ))
    return rows


def read_rollout_csv(path) -> dict[tuple[str, int], float]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) <= 1:
        raise ValueError(f"no rows in {path}")
    sums = {}
    for line in lines[1:]:
        variant, start, value = line.split(",")
        sums[(variant, int(start))] = float(value)
    return sums


def markdown_report(agg_rows: list[LossRow], sums: dict[tuple[str, int], float],
                    steps: tuple[int, ...] = (1, 5, 10)) -> str:
    """Markdown table: per start, one row per variant, per-step mean-over-
    variables columns plus the rollout sum; per-column minima are bolded
    when more than one variant is present."""
    if not agg_rows:
        raise ValueError("no rows to report")
    variants: list[str] = []
    starts: list[int] = []
    table: dict[tuple[str, int, int], list[float]] = {}
    for row in agg_rows:
        if row.variant not in variants:
            variants.append(row.variant)
        if row.start not in starts:
            starts.append(row.start)
        table.setdefault((row.variant, row.start, row.step), []).append(row.value)

    def cell(variant: str, start: int, step: int) -> float | None:
        values = table.get((variant, start, step))
        return _mean(values) if values else None

    lines = []
    header = "| Model | Start | " + " | ".join(str(s) for s in steps) + " | Rollout |"
    rule = "|---" * (len(steps) + 3) + "|"
    lines.append(header)
    lines.append(rule)
    for start in starts:
        columns: dict[int | str, list[float]] = {}
        for step in steps:
            columns[step] = [v for v in (cell(v_, start, step) for v_ in variants)
                             if v is not None]
        columns["rollout"] = [sums[(v_, start)] for v_ in variants
                              if (v_, start) in sums]
        for variant in variants:
            parts = [variant, str(start)]
            for step in steps:
                value = cell(variant, start, step)
                parts.append(_format_cell(value, columns[step], len(variants)))
            value = sums.get((variant, start))
            parts.append(_format_cell(value, columns["rollout"], len(variants)))
            lines.append("| " + " | ".join(parts) + " |")
    return "\n".join(lines) + "\n"


def _format_cell(value: float | None, column: list[float], n_variants: int) -> str:
    if value is None:
        return "-"
    text = f"{value:.4g}"
    if n_variants > 1 and column and value == min(column):
        return f"**{text}**"
    return text
