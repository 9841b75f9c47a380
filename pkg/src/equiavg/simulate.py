"""Desk-scale ground truth: two-species reaction-diffusion on a periodic grid.

The integrator is explicit Euler with a 5-point Laplacian, so its update
commutes exactly with lattice shifts and square symmetries. Initial
conditions are drawn from distributions that are invariant under those same
symmetries (uniform random phases and positions on the torus), which is the
setting where test-time averaging provably helps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .fields import (
    DEFAULT_DTYPE,
    PERIODIC_BOTH,
    FieldSet,
    GridSpec,
    Trajectory,
    make_fieldset,
    make_schema,
    load_trajectory,
    save_trajectory,
    spatial_mean,
)

GS_SCHEMA = make_schema(("A", "scalar"), ("B", "scalar"))

STEADY_STATE_VARIANCE = 1e-8

RANDOM_FOURIER = "random-fourier"
GAUSSIAN_CLUSTERS = "gaussian-clusters"


class SimulationError(RuntimeError):
    """Unstable parameters or a diverging run."""


@dataclass(frozen=True)
class GrayScottParams:
    """Feed/kill reaction rates, species diffusivities, and integrator step."""

    d_a: float = 2e-5
    d_b: float = 1e-5
    feed: float = 0.028
    kill: float = 0.062
    dt: float = 1.0
    substeps: int = 10

    def __post_init__(self):
        for name in ("d_a", "d_b", "feed", "kill", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


def max_stable_dt(params: GrayScottParams, grid: GridSpec) -> float:
    """Explicit-Euler diffusion bound; equals dx^2/(4 max(D)) on square cells."""
    inv = 1.0 / grid.dx**2 + 1.0 / grid.dy**2
    return 0.5 / (max(params.d_a, params.d_b) * inv)


def stable_params(grid: GridSpec, margin: float = 2.0, **kwargs) -> GrayScottParams:
    """Params with dt set to the stability bound divided by ``margin``.

    On coarse grids the diffusion bound alone can exceed the reaction
    timescale, so dt is additionally capped at 0.25 / (feed + kill).
    """
    probe = GrayScottParams(dt=1.0, **kwargs)
    bound = min(max_stable_dt(probe, grid), 0.25 / (probe.feed + probe.kill))
    return GrayScottParams(dt=bound / margin, **kwargs)


def _check_stability(params: GrayScottParams, grid: GridSpec) -> None:
    bound = max_stable_dt(params, grid)
    if params.dt > bound * (1 + 1e-12):
        raise SimulationError(
            f"dt={params.dt:g} violates the stability bound {bound:g} "
            f"for this grid and diffusivities"
        )


def _check_state(state: FieldSet) -> None:
    if state.grid.boundary != PERIODIC_BOTH:
        raise SimulationError("reaction-diffusion stepping requires periodic-both boundary")
    kinds = tuple(g.kind for g in state.schema)
    if len(state.schema) != 2 or kinds != ("scalar", "scalar"):
        raise SimulationError("state must have exactly two scalar channels")
    if not np.all(np.isfinite(state.data)):
        raise SimulationError("state contains non-finite values")


def gray_scott_step(state: FieldSet, params: GrayScottParams) -> FieldSet:
    """One explicit Euler substep of the two-species reaction-diffusion system."""
    _check_state(state)
    _check_stability(params, state.grid)
    a, b = kernels.gs_substeps(
        state.data[0], state.data[1], params.d_a, params.d_b,
        params.feed, params.kill, params.dt,
        1.0 / state.grid.dx**2, 1.0 / state.grid.dy**2, 1,
    )
    out = np.stack([a, b]).astype(state.dtype)
    return FieldSet(state.grid, state.schema, out, state.time_index)


@dataclass(frozen=True)
class InitialConditionSpec:
    """Random field family for the first snapshot.

    random-fourier: low-pass filtered white noise (isotropic radial cutoff at
    ``modes``), normalized to unit RMS and scaled by ``amplitude``.
    gaussian-clusters: ``count`` clusters of width ``width`` cells at uniform
    positions on the torus, wrapped with minimum-image distances.
    Both families give sampling distributions invariant under all lattice
    shifts and square symmetries; individual samples are not symmetric.
    """

    kind: str = RANDOM_FOURIER
    modes: int = 8
    count: int = 12
    width: float = 3.0
    amplitude: float = 0.8

    def __post_init__(self):
        if self.kind not in (RANDOM_FOURIER, GAUSSIAN_CLUSTERS):
            raise ValueError(f"unknown initial-condition kind {self.kind!r}")
        if self.modes < 1 or self.count < 1:
            raise ValueError("modes and count must be at least 1")
        if self.width <= 0 or self.amplitude < 0:
            raise ValueError("width must be positive and amplitude non-negative")


def _fourier_pattern(grid: GridSpec, ic: InitialConditionSpec,
                     rng: np.random.Generator) -> np.ndarray:
    # cutoff stays below the Nyquist band so the radial mask is exactly
    # symmetric under the square-symmetry action on frequencies
    cutoff = min(ic.modes, min(grid.nx, grid.ny) // 2 - 1)
    noise = rng.standard_normal((grid.ny, grid.nx))
    kx = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
    ky = np.fft.fftfreq(grid.ny, d=1.0 / grid.ny)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    mask = (k2 > 0) & (k2 <= cutoff**2)
    filtered = np.real(np.fft.ifft2(np.fft.fft2(noise) * mask))
    rms = np.sqrt(np.mean(filtered**2))
    return np.clip(ic.amplitude * filtered / rms, 0.0, 1.0)


def _cluster_pattern(grid: GridSpec, ic: InitialConditionSpec,
                     rng: np.random.Generator) -> np.ndarray:
    cx = rng.uniform(0.0, grid.nx, ic.count)
    cy = rng.uniform(0.0, grid.ny, ic.count)
    ix = np.arange(grid.nx)[None, :]
    iy = np.arange(grid.ny)[:, None]
    pattern = np.zeros((grid.ny, grid.nx))
    for x0, y0 in zip(cx, cy):
        # minimum-image offsets keep the bump isotropic on the torus
        ox = (ix - x0 + grid.nx / 2) % grid.nx - grid.nx / 2
        oy = (iy - y0 + grid.ny / 2) % grid.ny - grid.ny / 2
        pattern += np.exp(-(ox**2 + oy**2) / (2.0 * ic.width**2))
    return np.clip(ic.amplitude * pattern, 0.0, 1.0)


def sample_initial_state(grid: GridSpec, ic: InitialConditionSpec,
                         rng: np.random.Generator) -> FieldSet:
    """Draw one initial snapshot: A = 1 - P/2, B = P/4 for a pattern P in [0, 1]."""
    if grid.boundary != PERIODIC_BOTH:
        raise SimulationError("initial conditions are defined on the full torus")
    if ic.kind == RANDOM_FOURIER:
        pattern = _fourier_pattern(grid, ic, rng)
    else:
        pattern = _cluster_pattern(grid, ic, rng)
    a = 1.0 - 0.5 * pattern
    b = 0.25 * pattern
    return make_fieldset(grid, GS_SCHEMA, np.stack([a, b]), time_index=0,
                         dtype=np.float64)


def generate_trajectory(grid: GridSpec, params: GrayScottParams,
                        ic: InitialConditionSpec, frames: int, seed,
                        dtype=DEFAULT_DTYPE) -> Trajectory:
    """Integrate from a seeded initial condition, saving every ``substeps`` steps."""
    if frames < 1:
        raise ValueError("frames must be at least 1")
    _check_stability(params, grid)
    rng = np.random.default_rng(seed)
    state0 = sample_initial_state(grid, ic, rng)
    a = state0.data[0]
    b = state0.data[1]
    inv_dx2 = 1.0 / grid.dx**2
    inv_dy2 = 1.0 / grid.dy**2
    out = [FieldSet(grid, GS_SCHEMA, state0.data.astype(dtype), time_index=0)]
    for i in range(1, frames):
        a, b = kernels.gs_substeps(
            a, b, params.d_a, params.d_b, params.feed, params.kill,
            params.dt, inv_dx2, inv_dy2, params.substeps,
        )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise SimulationError(f"state blew up at saved frame {i}")
        out.append(FieldSet(grid, GS_SCHEMA, np.stack([a, b]).astype(dtype), time_index=i))
    return Trajectory(grid, GS_SCHEMA, tuple(out), dt=params.dt * params.substeps)


def is_steady_state(traj: Trajectory, threshold: float = STEADY_STATE_VARIANCE) -> bool:
    """Flag runs whose final frame has (near) zero spatial variance everywhere."""
    last = traj.frames[-1]
    worst = 0.0
    for group in traj.schema:
        for plane in last.channel_data(group.name):
            mean = plane.mean(dtype=np.float64)
            worst = max(worst, float(np.mean((plane - mean) ** 2, dtype=np.float64)))
    return worst < threshold


@dataclass(frozen=True)
class Dataset:
    """A generated dataset directory: manifest plus trajectory subdirectories."""

    path: Path
    manifest: dict

    @property
    def train_names(self) -> list[str]:
        return list(self.manifest["train"])

    @property
    def test_names(self) -> list[str]:
        return list(self.manifest["test"])

    @property
    def flagged(self) -> set[str]:
        return set(self.manifest["flagged"])

    def load(self, name: str) -> Trajectory:
        return load_trajectory(self.path / name)

    def load_split(self, split: str, include_flagged: bool = True) -> list[tuple[str, Trajectory]]:
        names = self.train_names if split == "train" else self.test_names
        if not include_flagged:
            names = [n for n in names if n not in self.flagged]
        return [(n, self.load(n)) for n in names]


def make_dataset(out_dir, grid: GridSpec, params: GrayScottParams,
                 ic: InitialConditionSpec, n_traj: int, frames: int,
                 master_seed: int, test_fraction: float = 0.1,
                 dtype=DEFAULT_DTYPE) -> Dataset:
    """Generate and persist n_traj trajectories with a disjoint train/test split.

    Trajectory i is seeded with entropy (master_seed, i); the last
    round(n_traj * test_fraction) trajectories form the test split.
    Steady-state runs are flagged in the manifest, not dropped.
    """
    if n_traj < 2:
        raise ValueError("need at least 2 trajectories to form a split")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    names = [f"traj_{i:03d}" for i in range(n_traj)]
    flagged = []
    for i, name in enumerate(names):
        traj = generate_trajectory(grid, params, ic, frames,
                                   seed=[master_seed, i], dtype=dtype)
        save_trajectory(traj, out_dir / name)
        if is_steady_state(traj):
            flagged.append(name)

    n_test = max(1, int(round(n_traj * test_fraction)))
    manifest = {
        "grid": {"nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "dy": grid.dy,
                 "boundary": grid.boundary},
        "params": asdict(params),
        "ic": asdict(ic),
        "n_traj": n_traj,
        "frames": frames,
        "master_seed": master_seed,
        "test_fraction": test_fraction,
        "dtype": np.dtype(dtype).name,
        "seeds": {name: [master_seed, i] for i, name in enumerate(names)},
        "train": names[: n_traj - n_test],
        "test": names[n_traj - n_test:],
        "flagged": flagged,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return Dataset(out_dir, manifest)


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    return Dataset(path, json.loads(manifest_path.read_text()))
