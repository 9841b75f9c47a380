"""A small shared-weight patch model: the autoregressive next-frame predictor.

Every cell maps its k-frame, (2p+1)^2-cell neighborhood (periodic padding)
through one optional tanh hidden layer to the next values of all channels.
Weight sharing makes the model commute with lattice shifts for any
parameter values; nothing constrains it under flips or rotations, which is
exactly the asymmetry that test-time group averaging removes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .fields import (
    FieldSet,
    GridSpec,
    Trajectory,
    Window,
    make_schema,
    schema_components,
)

MAGIC = b"EQUIAVG-STENCIL v1\n"


class ModelFormatError(ValueError):
    """Unreadable or wrong-version model file."""


class ModelMismatchError(ValueError):
    """Model config does not match the data it is asked to process."""


class TrainingDivergedError(RuntimeError):
    """Loss exploded past the abort threshold."""


@dataclass(frozen=True)
class StencilModelConfig:
    k: int = 4            # history length
    patch: int = 2        # patch radius p, receptive field (2p+1)^2
    hidden: int = 64      # units per cell; 0 gives a linear model
    seed: int = 0
    residual: bool = False  # predict a delta on the last frame instead

    def __post_init__(self):
        if self.k < 1 or self.patch < 1 or self.hidden < 0:
            raise ValueError("need k >= 1, patch >= 1, hidden >= 0")

    @property
    def patch_cells(self) -> int:
        return (2 * self.patch + 1) ** 2


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 40
    batch: int = 4096     # cells per update
    momentum: float = 0.9
    windows_per_epoch: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 0 or self.batch < 1 or self.windows_per_epoch < 1:
            raise ValueError("invalid training sizes")


def feature_index(config: StencilModelConfig, n_comp: int, frame: int,
                  comp: int, oy: int, ox: int) -> int:
    """Column index of one patch input (frame-major, then component, then
    patch row, then column; offsets in [-p, p])."""
    p = config.patch
    width = 2 * p + 1
    return ((frame * n_comp + comp) * width + (oy + p)) * width + (ox + p)


class StencilModel:
    """Shared-weight patch predictor over a fixed grid and schema."""

    def __init__(self, config: StencilModelConfig, grid: GridSpec, schema):
        self.config = config
        self.grid = grid
        self.schema = tuple(schema)
        self.n_comp = schema_components(self.schema)
        self.n_features = config.k * self.n_comp * config.patch_cells
        self.norm_mean = np.zeros(self.n_comp)
        self.norm_std = np.ones(self.n_comp)
        rng = np.random.default_rng(config.seed)
        f, h, s = self.n_features, config.hidden, self.n_comp
        if h > 0:
            self.params = {
                "w1": rng.normal(0.0, 1.0 / np.sqrt(f), (f, h)),
                "b1": np.zeros(h),
                "w2": rng.normal(0.0, 1.0 / np.sqrt(h), (h, s)),
                "b2": np.zeros(s),
            }
        else:
            self.params = {
                "w": rng.normal(0.0, 1.0 / np.sqrt(f), (f, s)),
                "b": np.zeros(s),
            }

    @property
    def k(self) -> int:
        return self.config.k

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def _check_window(self, window: Window) -> None:
        if window.k != self.config.k:
            raise ModelMismatchError(
                f"window has {window.k} frames, model expects {self.config.k}"
            )
        if window.grid != self.grid or window.schema != self.schema:
            raise ModelMismatchError("window grid/schema does not match the model")

    def normalize_planes(self, data: np.ndarray) -> np.ndarray:
        return (data.astype(np.float64) - self.norm_mean[:, None, None]) \
            / self.norm_std[:, None, None]

    def features(self, window: Window) -> np.ndarray:
        """Patch matrix [n_cells, n_features], normalized, float64."""
        self._check_window(window)
        p = self.config.patch
        columns = []
        for frame in window.frames:
            planes = self.normalize_planes(frame.data)
            for comp in range(self.n_comp):
                for oy in range(-p, p + 1):
                    for ox in range(-p, p + 1):
                        columns.append(
                            np.roll(planes[comp], (-oy, -ox), (0, 1)).ravel()
                        )
        return np.stack(columns, axis=1)

    def _forward(self, x: np.ndarray):
        if self.config.hidden > 0:
            hidden = np.tanh(x @ self.params["w1"] + self.params["b1"])
            return hidden @ self.params["w2"] + self.params["b2"], hidden
        return x @ self.params["w"] + self.params["b"], None

    def predict(self, window: Window) -> FieldSet:
        """Next-frame prediction; output dtype follows the window."""
        x = self.features(window)
        y, _ = self._forward(x)
        planes = y.T.reshape(self.n_comp, self.grid.ny, self.grid.nx)
        if self.config.residual:
            out = window.last.data.astype(np.float64) \
                + planes * self.norm_std[:, None, None]
        else:
            out = planes * self.norm_std[:, None, None] + self.norm_mean[:, None, None]
        return FieldSet(self.grid, self.schema, out.astype(window.last.dtype),
                        window.last.time_index + 1)

    def target_planes(self, window: Window, target: FieldSet) -> np.ndarray:
        """Normalized regression target [n_cells, n_comp] for one pair."""
        if self.config.residual:
            delta = target.data.astype(np.float64) - window.last.data.astype(np.float64)
            t = delta / self.norm_std[:, None, None]
        else:
            t = self.normalize_planes(target.data)
        return t.reshape(self.n_comp, -1).T


def loss_and_gradient(model: StencilModel, batch, cell_indices=None):
    """Mean squared error over a batch of (window, target) pairs and its
    exact analytic gradient for every parameter.

    cell_indices optionally restricts each pair to a subset of cells (the
    same subset for every pair), which is how training subsamples.
    """
    xs, ts = [], []
    for window, target in batch:
        x = model.features(window)
        t = model.target_planes(window, target)
        if cell_indices is not None:
            x = x[cell_indices]
            t = t[cell_indices]
        xs.append(x)
        ts.append(t)
    x = np.concatenate(xs, axis=0)
    t = np.concatenate(ts, axis=0)
    y, hidden = model._forward(x)
    resid = y - t
    loss = float(np.mean(resid**2))
    dy = (2.0 / resid.size) * resid
    if model.config.hidden > 0:
        grads = {
            "w2": hidden.T @ dy,
            "b2": dy.sum(axis=0),
        }
        dh = (dy @ model.params["w2"].T) * (1.0 - hidden**2)
        grads["w1"] = x.T @ dh
        grads["b1"] = dh.sum(axis=0)
    else:
        grads = {"w": x.T @ dy, "b": dy.sum(axis=0)}
    return loss, grads


def set_normalization(model: StencilModel, trajectories: list[Trajectory]) -> None:
    """Per-component mean/std over all frames of the given trajectories."""
    stacks = [
        frame.data.astype(np.float64).reshape(model.n_comp, -1)
        for traj in trajectories
        for frame in traj.frames
    ]
    flat = np.concatenate(stacks, axis=1)
    model.norm_mean = flat.mean(axis=1)
    model.norm_std = np.maximum(flat.std(axis=1), 1e-8)


def train(model: StencilModel, trajectories: list[Trajectory],
          cfg: TrainConfig) -> list[float]:
    """SGD with momentum on sampled (window, next-frame) pairs.

    Returns the per-epoch mean loss curve. Deterministic for fixed seeds.
    Aborts if the loss exceeds 1e3 times the first recorded value.
    """
    if not trajectories:
        raise ValueError("training needs at least one trajectory")
    pairs = [
        (ti, t)
        for ti, traj in enumerate(trajectories)
        for t in range(model.config.k - 1, len(traj.frames) - 1)
    ]
    if not pairs:
        raise ValueError("trajectories are too short for the model window")
    set_normalization(model, trajectories)

    rng = np.random.default_rng(cfg.seed)
    n_cells = model.grid.n_cells
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    curve: list[float] = []
    initial = None
    for _ in range(cfg.epochs):
        losses = []
        for _ in range(cfg.windows_per_epoch):
            ti, t = pairs[int(rng.integers(len(pairs)))]
            frames = trajectories[ti].frames
            window = Window(frames[t - model.config.k + 1: t + 1])
            target = frames[t + 1]
            cells = None
            if cfg.batch < n_cells:
                cells = rng.integers(0, n_cells, size=cfg.batch)
            loss, grads = loss_and_gradient(model, [(window, target)], cells)
            if initial is None:
                initial = loss
            if loss > 1e3 * initial:
                raise TrainingDivergedError(
                    f"loss {loss:g} exceeded 1e3 x initial {initial:g}"
                )
            for name, grad in grads.items():
                velocity[name] = cfg.momentum * velocity[name] - cfg.lr * grad
                model.params[name] = model.params[name] + velocity[name]
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return curve


def save_model(model: StencilModel, path) -> None:
    """Versioned header (config JSON) plus little-endian float64 parameters."""
    order = sorted(model.params)
    header = {
        "config": asdict(model.config),
        "grid": {"nx": model.grid.nx, "ny": model.grid.ny, "dx": model.grid.dx,
                 "dy": model.grid.dy, "boundary": model.grid.boundary},
        "schema": [{"name": g.name, "kind": g.kind} for g in model.schema],
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in order],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for name in order:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_model(path) -> StencilModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"unsupported model header {magic!r}")
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ModelFormatError("corrupted model header") from exc
        config = StencilModelConfig(**header["config"])
        grid = GridSpec(**header["grid"])
        schema = make_schema(*[(g["name"], g["kind"]) for g in header["schema"]])
        model = StencilModel(config, grid, schema)
        model.norm_mean = np.asarray(header["norm_mean"], dtype=np.float64)
        model.norm_std = np.asarray(header["norm_std"], dtype=np.float64)
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ModelFormatError("model file truncated")
            model.params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return model
