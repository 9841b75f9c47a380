"""Typed state fields on a uniform 2D grid.

Storage is channel-major: ``data[component, iy, ix]`` with x along columns
(fastest varying) and y along rows. Vector channels order their components
(x, y); tensor channels (xx, xy, yx, yy) row-major. Fields are immutable
after construction so they can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PERIODIC_BOTH = "periodic-both"
PERIODIC_X_NEUMANN_Y = "periodic-x-neumann-y"
BOUNDARIES = (PERIODIC_BOTH, PERIODIC_X_NEUMANN_Y)

KIND_COMPONENTS = {"scalar": 1, "vector": 2, "tensor": 4}

DEFAULT_DTYPE = np.float32

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


class FieldError(ValueError):
    """Invalid field construction, lookup, or sequencing."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform 2D grid: nx columns (x) by ny rows (y)."""

    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    boundary: str = PERIODIC_BOTH

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise FieldError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise FieldError("grid spacing must be positive")
        if self.boundary not in BOUNDARIES:
            raise FieldError(f"unknown boundary {self.boundary!r}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def is_square(self) -> bool:
        return self.nx == self.ny and self.dx == self.dy

    def periodic_axis(self, axis: str) -> bool:
        """Whether the grid wraps along 'x' or 'y'."""
        if axis == "x":
            return True  # both supported boundary modes are periodic in x
        if axis == "y":
            return self.boundary == PERIODIC_BOTH
        raise FieldError(f"unknown axis {axis!r}")


@dataclass(frozen=True)
class ChannelGroup:
    """One named quantity in the channel stack: scalar, vector, or tensor."""

    name: str
    kind: str
    offset: int

    def __post_init__(self):
        if self.kind not in KIND_COMPONENTS:
            raise FieldError(f"unknown channel kind {self.kind!r}")
        if self.offset < 0:
            raise FieldError("channel offset must be non-negative")

    @property
    def components(self) -> int:
        return KIND_COMPONENTS[self.kind]

    @property
    def span(self) -> slice:
        return slice(self.offset, self.offset + self.components)


def make_schema(*specs: tuple[str, str]) -> tuple[ChannelGroup, ...]:
    """Build a schema with contiguous offsets from (name, kind) pairs."""
    groups = []
    offset = 0
    for name, kind in specs:
        groups.append(ChannelGroup(name, kind, offset))
        offset += KIND_COMPONENTS[kind]
    return tuple(groups)


def schema_components(schema: tuple[ChannelGroup, ...]) -> int:
    """Total component count; raises on gaps, overlaps, or duplicate names."""
    if not schema:
        raise FieldError("schema must contain at least one channel group")
    names = [g.name for g in schema]
    if len(set(names)) != len(names):
        raise FieldError(f"duplicate channel names in schema: {names}")
    offset = 0
    for group in schema:
        if group.offset != offset:
            raise FieldError(
                f"channel {group.name!r} offset {group.offset} is not contiguous "
                f"(expected {offset})"
            )
        offset += group.components
    return offset


@dataclass(frozen=True)
class FieldSet:
    """One time snapshot: stacked channel planes over a grid.

    ``data`` has shape [components, ny, nx] and is frozen on construction.
    Use :func:`make_fieldset` for external data; it also rejects NaN/Inf.
    """

    grid: GridSpec
    schema: tuple[ChannelGroup, ...]
    data: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        total = schema_components(self.schema)
        data = np.asarray(self.data)
        expected = (total, self.grid.ny, self.grid.nx)
        if data.shape != expected:
            raise FieldError(f"data shape {data.shape} does not match {expected}")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "schema", tuple(self.schema))

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def n_components(self) -> int:
        return self.data.shape[0]

    def channel(self, name: str) -> ChannelGroup:
        for group in self.schema:
            if group.name == name:
                return group
        raise FieldError(f"unknown channel {name!r}")

    def channel_data(self, name: str) -> np.ndarray:
        """Read-only view [components, ny, nx] of one channel group."""
        return self.data[self.channel(name).span]


def make_fieldset(grid: GridSpec, schema, data, time_index: int = 0,
                  dtype=None) -> FieldSet:
    """Validated FieldSet from external data; copies and rejects NaN/Inf."""
    arr = np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    total = schema_components(tuple(schema))
    if arr.ndim == 2 and total == 1:
        arr = arr[None]
    if arr.shape != (total, grid.ny, grid.nx):
        raise FieldError(
            f"data shape {arr.shape} does not match schema/grid "
            f"({total}, {grid.ny}, {grid.nx})"
        )
    if not np.all(np.isfinite(arr)):
        raise FieldError("field data contains non-finite values")
    return FieldSet(grid, tuple(schema), arr, time_index)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered FieldSets sharing one grid and schema."""

    grid: GridSpec
    schema: tuple[ChannelGroup, ...]
    frames: tuple[FieldSet, ...]
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "schema", tuple(self.schema))
        if not self.frames:
            raise FieldError("trajectory needs at least one frame")
        if self.dt <= 0:
            raise FieldError("dt must be positive")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.time_index != prev.time_index + 1:
                raise FieldError(
                    f"frame time indices must increase by 1, got "
                    f"{prev.time_index} -> {cur.time_index}"
                )
        for frame in self.frames:
            if frame.grid != self.grid or frame.schema != self.schema:
                raise FieldError("all frames must share the trajectory grid and schema")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class Window:
    """Exactly k consecutive snapshots, the surrogate's input."""

    frames: tuple[FieldSet, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise FieldError("window needs at least one frame")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.time_index != prev.time_index + 1:
                raise FieldError("window frames must be consecutive in time")

    @property
    def k(self) -> int:
        return len(self.frames)

    @property
    def grid(self) -> GridSpec:
        return self.frames[0].grid

    @property
    def schema(self) -> tuple[ChannelGroup, ...]:
        return self.frames[0].schema

    @property
    def last(self) -> FieldSet:
        return self.frames[-1]


def slide_window(window: Window, nxt: FieldSet) -> Window:
    """Drop the oldest frame and append ``nxt``; length stays k."""
    if nxt.time_index != window.last.time_index + 1:
        raise FieldError(
            f"time-index gap: window ends at {window.last.time_index}, "
            f"next frame is {nxt.time_index}"
        )
    return Window(window.frames[1:] + (nxt,))


def spatial_mean(field: FieldSet, channel: str) -> np.ndarray:
    """Arithmetic mean over all cells, one float64 value per component."""
    return field.channel_data(channel).mean(axis=(1, 2), dtype=np.float64)


def save_trajectory(traj: Trajectory, path) -> None:
    """Write a trajectory directory: meta.json plus raw little-endian frames."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype_name = np.dtype(traj.frames[0].dtype).name
    if dtype_name not in _DTYPE_CODES:
        raise FieldError(f"unsupported trajectory dtype {dtype_name}")
    meta = {
        "grid": {
            "nx": traj.grid.nx,
            "ny": traj.grid.ny,
            "dx": traj.grid.dx,
            "dy": traj.grid.dy,
            "boundary": traj.grid.boundary,
        },
        "schema": [{"name": g.name, "kind": g.kind} for g in traj.schema],
        "dt": traj.dt,
        "frames": len(traj.frames),
        "dtype": dtype_name,
        "endianness": "little",
        "time_index0": traj.frames[0].time_index,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    code = _DTYPE_CODES[dtype_name]
    with open(path / "frames.bin", "wb") as fh:
        for frame in traj.frames:
            fh.write(np.ascontiguousarray(frame.data, dtype=code).tobytes())


def load_trajectory(path) -> Trajectory:
    """Read a trajectory directory written by :func:`save_trajectory`."""
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    grid = GridSpec(**meta["grid"])
    schema = make_schema(*[(g["name"], g["kind"]) for g in meta["schema"]])
    total = schema_components(schema)
    code = _DTYPE_CODES[meta["dtype"]]
    raw = np.fromfile(path / "frames.bin", dtype=code)
    n_frames = meta["frames"]
    expected = n_frames * total * grid.ny * grid.nx
    if raw.size != expected:
        raise FieldError(
            f"frames.bin has {raw.size} values, expected {expected}"
        )
    planes = raw.reshape(n_frames, total, grid.ny, grid.nx)
    t0 = meta.get("time_index0", 0)
    frames = tuple(
        FieldSet(grid, schema, planes[i].copy(), time_index=t0 + i)
        for i in range(n_frames)
    )
    return Trajectory(grid, schema, frames, dt=meta["dt"])
