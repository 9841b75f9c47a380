"""Make any windowed surrogate equivariant by averaging it over a group.

The wrapped prediction is the uniform mean, over group elements g, of
"untransform(predict(transform(window)))". Full enumeration gives exact
equivariance up to summation rounding; Monte-Carlo sampling approximates it
with n draws. The group sum accumulates in float64 in a fixed order so
results are reproducible bit for bit given seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import groups
from .fields import FieldSet, Trajectory, Window, slide_window

FULL = "full"
MONTE_CARLO = "mc"


class Surrogate(Protocol):
    """Anything that maps a k-frame window to the next frame."""

    k: int

    def predict(self, window: Window) -> FieldSet: ...


class RolloutDivergenceError(RuntimeError):
    """A rollout produced a non-finite prediction."""

    def __init__(self, step: int):
        super().__init__(f"non-finite prediction at rollout step {step}")
        self.step = step


@dataclass(frozen=True)
class AveragingConfig:
    """How to average: which group, full enumeration or n Monte-Carlo draws."""

    group: groups.GroupSpec
    mode: str = FULL
    n: int = 1
    seed: int = 0
    resample_per_step: bool = True

    def __post_init__(self):
        if self.mode not in (FULL, MONTE_CARLO):
            raise ValueError(f"unknown averaging mode {self.mode!r}")
        if self.mode == MONTE_CARLO and self.n < 1:
            raise ValueError("Monte-Carlo averaging needs n >= 1")


@dataclass
class RolloutResult:
    predicted: Trajectory
    # per step: encoded elements used by Monte-Carlo averaging, None otherwise
    elements_per_step: list[tuple[str, ...] | None] = field(default_factory=list)


def _select_elements(cfg: AveragingConfig, rng: np.random.Generator | None):
    if cfg.mode == FULL:
        return groups.elements(cfg.group)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return groups.sample(cfg.group, cfg.n, rng)


def averaged_predict(model: Surrogate, window: Window, cfg: AveragingConfig,
                     rng: np.random.Generator | None = None,
                     elements: list | None = None) -> FieldSet:
    """Group-averaged prediction for one window.

    ``elements`` overrides the config's selection (used by rollout to control
    per-step resampling); otherwise full mode enumerates the group and
    Monte-Carlo mode draws cfg.n elements from ``rng``.
    """
    if elements is None:
        elements = _select_elements(cfg, rng)
    acc = None
    time_index = None
    for g in elements:
        pred = model.predict(groups.apply_window(g, window))
        back = groups.apply(groups.inverse(g), pred)
        if acc is None:
            acc = back.data.astype(np.float64)
            time_index = back.time_index
        else:
            acc = acc + back.data
    out = (acc / len(elements)).astype(window.last.dtype)
    return FieldSet(window.grid, window.schema, out, time_index)


def rollout(model: Surrogate, init: Window, horizon: int,
            cfg: AveragingConfig | None = None,
            rng: np.random.Generator | None = None,
            dt: float = 1.0) -> RolloutResult:
    """Apply the (optionally averaged) model repeatedly for ``horizon`` steps.

    Averaged predictions are fed back into the window, never the plain ones.
    With Monte-Carlo mode, fresh elements are drawn every step unless
    cfg.resample_per_step is False, in which case one draw is reused.
    """
    if horizon < 1:
        raise ValueError("rollout horizon must be at least 1")
    if cfg is not None and cfg.mode == MONTE_CARLO and rng is None:
        rng = np.random.default_rng(cfg.seed)
    fixed = None
    if cfg is not None and cfg.mode == MONTE_CARLO and not cfg.resample_per_step:
        fixed = groups.sample(cfg.group, cfg.n, rng)

    window = init
    frames = []
    elements_log: list[tuple[str, ...] | None] = []
    for step in range(horizon):
        if cfg is None:
            pred = model.predict(window)
            elements_log.append(None)
        elif cfg.mode == FULL:
            pred = averaged_predict(model, window, cfg)
            elements_log.append(None)
        else:
            chosen = fixed if fixed is not None else groups.sample(cfg.group, cfg.n, rng)
            pred = averaged_predict(model, window, cfg, elements=chosen)
            elements_log.append(tuple(groups.format_element(g) for g in chosen))
        if not np.all(np.isfinite(pred.data)):
            raise RolloutDivergenceError(step)
        frames.append(pred)
        window = slide_window(window, pred)
    predicted = Trajectory(init.grid, init.schema, tuple(frames), dt=dt)
    return RolloutResult(predicted, elements_log)


@dataclass(frozen=True)
class EquivarianceReport:
    """Max relative deviation from f(transform(x)) == transform(f(x))."""

    max_deviation: float
    tolerance: float
    entries: tuple[tuple[int, str, float], ...]  # (probe index, element, deviation)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def check_equivariance(model: Surrogate, group: groups.GroupSpec,
                       probe_windows, tolerance: float) -> EquivarianceReport:
    """Measure equivariance of a model over probe windows and all of G.

    Deviation is ||predict(g*w) - g*predict(w)|| / ||predict(w)|| in the
    Frobenius norm, computed in float64. This is a report, not an exception.
    """
    entries = []
    worst = 0.0
    for p_idx, window in enumerate(probe_windows):
        base = model.predict(window)
        base_norm = float(np.linalg.norm(base.data.astype(np.float64)))
        scale = max(base_norm, np.finfo(np.float64).tiny)
        for g in groups.elements(group):
            lhs = model.predict(groups.apply_window(g, window))
            rhs = groups.apply(g, base)
            dev = float(
                np.linalg.norm(lhs.data.astype(np.float64) - rhs.data.astype(np.float64))
            ) / scale
            entries.append((p_idx, groups.format_element(g), dev))
            worst = max(worst, dev)
    return EquivarianceReport(worst, tolerance, tuple(entries))


@dataclass(frozen=True)
class AveragedModel:
    """A surrogate wrapped with group averaging, itself a surrogate."""

    model: Surrogate
    cfg: AveragingConfig

    @property
    def k(self) -> int:
        return self.model.k

    def predict(self, window: Window) -> FieldSet:
        return averaged_predict(self.model, window, self.cfg)


@dataclass(frozen=True)
class PersistenceModel:
    """Reference surrogate: predicts the last frame unchanged."""

    k: int = 1

    def predict(self, window: Window) -> FieldSet:
        last = window.last
        return FieldSet(last.grid, last.schema, last.data, last.time_index + 1)
