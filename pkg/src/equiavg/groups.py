"""Exact symmetry actions on grid fields.

Two element families: dihedral words (quarter-turn rotations and x-inversion
of a square or rectangle) and periodic lattice shifts. Every action is a pure
index permutation plus, for vectors and tensors, a signed permutation of
components, so applying an element and then its inverse is bit-exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .fields import FieldSet, GridSpec, Window

GROUP_KINDS = ("d1", "d2", "d4", "circle-x", "torus")

# Matrix representation of the generators, columns ordered (x, y):
# quarter turn (x, y) -> (-y, x) and x-inversion (x, y) -> (-x, y).
ROT_MATRIX = np.array([[0, -1], [1, 0]], dtype=np.int64)
INV_MATRIX = np.array([[-1, 0], [0, 1]], dtype=np.int64)


class GroupError(ValueError):
    """Invalid element, composition, or group/grid pairing."""


@dataclass(frozen=True)
class DihedralElement:
    """Element inv^i * rot^r of the square-symmetry group (i in {0,1}, r in {0..3})."""

    inv: int
    rot: int

    def __post_init__(self):
        if self.inv not in (0, 1) or self.rot not in (0, 1, 2, 3):
            raise GroupError(f"invalid dihedral element ({self.inv}, {self.rot})")


@dataclass(frozen=True)
class ShiftElement:
    """Periodic lattice shift by (sx, sy) cells on an nx-by-ny grid."""

    sx: int
    sy: int
    nx: int
    ny: int

    def __post_init__(self):
        if not (0 <= self.sx < self.nx and 0 <= self.sy < self.ny):
            raise GroupError(
                f"shift ({self.sx}, {self.sy}) out of range for {self.nx}x{self.ny}"
            )


GroupElement = DihedralElement | ShiftElement


@dataclass(frozen=True)
class GroupSpec:
    """A finite symmetry group tied to a grid size."""

    kind: str
    nx: int
    ny: int

    def __post_init__(self):
        if self.kind not in GROUP_KINDS:
            raise GroupError(f"unknown group kind {self.kind!r}")

    @property
    def order(self) -> int:
        return {
            "d1": 2,
            "d2": 4,
            "d4": 8,
            "circle-x": self.nx,
            "torus": self.nx * self.ny,
        }[self.kind]


def group_for_grid(kind: str, grid: GridSpec) -> GroupSpec:
    """GroupSpec for a grid, enforcing shape/boundary compatibility."""
    spec = GroupSpec(kind, grid.nx, grid.ny)
    if kind == "d4" and not grid.is_square:
        raise GroupError("d4 requires a square grid (nx == ny and dx == dy)")
    if kind == "torus" and not grid.periodic_axis("y"):
        raise GroupError("torus shifts require periodic boundaries in both axes")
    if kind == "circle-x" and not grid.periodic_axis("x"):
        raise GroupError("circle-x shifts require a periodic x axis")
    return spec


def identity(spec: GroupSpec) -> GroupElement:
    if spec.kind in ("d1", "d2", "d4"):
        return DihedralElement(0, 0)
    return ShiftElement(0, 0, spec.nx, spec.ny)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Canonical-form product a*b (b acts first)."""
    if isinstance(a, DihedralElement) and isinstance(b, DihedralElement):
        # inv^i rot^r words reduce with rot * inv = inv * rot^-1
        if b.inv:
            return DihedralElement(a.inv ^ 1, (b.rot - a.rot) % 4)
        return DihedralElement(a.inv, (a.rot + b.rot) % 4)
    if isinstance(a, ShiftElement) and isinstance(b, ShiftElement):
        if (a.nx, a.ny) != (b.nx, b.ny):
            raise GroupError("cannot compose shifts of different grid sizes")
        return ShiftElement((a.sx + b.sx) % a.nx, (a.sy + b.sy) % a.ny, a.nx, a.ny)
    raise GroupError("cannot compose elements from different groups")


def inverse(g: GroupElement) -> GroupElement:
    if isinstance(g, DihedralElement):
        if g.inv:
            return g  # reflections are involutions
        return DihedralElement(0, (-g.rot) % 4)
    return ShiftElement((g.nx - g.sx) % g.nx, (g.ny - g.sy) % g.ny, g.nx, g.ny)


def elements(spec: GroupSpec) -> list[GroupElement]:
    """All |G| elements, identity first, in a fixed order."""
    if spec.kind == "d4":
        return [DihedralElement(i, r) for i in (0, 1) for r in (0, 1, 2, 3)]
    if spec.kind == "d2":
        return [DihedralElement(i, r) for i in (0, 1) for r in (0, 2)]
    if spec.kind == "d1":
        return [DihedralElement(0, 0), DihedralElement(1, 0)]
    if spec.kind == "circle-x":
        return [ShiftElement(sx, 0, spec.nx, spec.ny) for sx in range(spec.nx)]
    return [
        ShiftElement(sx, sy, spec.nx, spec.ny)
        for sy in range(spec.ny)
        for sx in range(spec.nx)
    ]


def _element_at(spec: GroupSpec, idx: int) -> GroupElement:
    if spec.kind in ("circle-x", "torus"):
        sy, sx = divmod(int(idx), spec.nx)
        return ShiftElement(sx, sy, spec.nx, spec.ny)
    return elements(spec)[int(idx)]


def sample(spec: GroupSpec, n: int, rng: np.random.Generator,
           replace: bool = True) -> list[GroupElement]:
    """Draw n elements uniformly; with replacement by default.

    Deterministic for a fixed generator state; sequence position determines
    each draw. replace=False (used by consistency tests) requires n <= |G|.
    """
    if n < 1:
        raise GroupError("sample count must be at least 1")
    if replace:
        idx = rng.integers(0, spec.order, size=n)
    else:
        if n > spec.order:
            raise GroupError(f"cannot draw {n} distinct elements from {spec.order}")
        idx = rng.permutation(spec.order)[:n]
    return [_element_at(spec, i) for i in idx]


def component_matrix(g: GroupElement) -> np.ndarray:
    """2x2 signed permutation mixing (x, y) vector components."""
    if isinstance(g, ShiftElement):
        return np.eye(2, dtype=np.int64)
    m = np.linalg.matrix_power(ROT_MATRIX, g.rot)
    if g.inv:
        m = INV_MATRIX @ m
    return m


def tensor_matrix(g: GroupElement) -> np.ndarray:
    """4x4 action on (xx, xy, yx, yy) induced by D' = m D m^T."""
    m = component_matrix(g)
    return np.einsum("ac,bd->abcd", m, m).reshape(4, 4)


def _check_compatible(g: GroupElement, grid: GridSpec) -> None:
    if isinstance(g, DihedralElement):
        if g.rot % 2 == 1 and not grid.is_square:
            raise GroupError("odd quarter-turns require a square grid")
        return
    if (g.nx, g.ny) != (grid.nx, grid.ny):
        raise GroupError(
            f"shift is for a {g.nx}x{g.ny} grid, field is {grid.nx}x{grid.ny}"
        )
    if g.sx and not grid.periodic_axis("x"):
        raise GroupError("x shift requires a periodic x axis")
    if g.sy and not grid.periodic_axis("y"):
        raise GroupError("y shift requires a periodic y axis")


def _move_cells(g: GroupElement, data: np.ndarray) -> np.ndarray:
    """Relocate all planes by g's grid action (cell (ix,iy) -> g*(ix,iy))."""
    if isinstance(g, ShiftElement):
        return np.roll(data, (g.sy, g.sx), axis=(1, 2))
    out = data
    if g.rot:
        # quarter turn maps (ix, iy) -> (ny-1-iy, ix)
        out = np.rot90(out, k=-g.rot, axes=(1, 2))
    if g.inv:
        out = out[:, :, ::-1]  # ix -> nx-1-ix
    return np.ascontiguousarray(out)


def _signed_permute(matrix: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Apply a signed permutation matrix to stacked component planes, exactly."""
    out = np.empty_like(planes)
    for row in range(matrix.shape[0]):
        (cols,) = np.nonzero(matrix[row])
        col = int(cols[0])
        out[row] = planes[col] if matrix[row, col] > 0 else -planes[col]
    return out


def apply(g: GroupElement, field: FieldSet) -> FieldSet:
    """Transform a field: relocate cells, then mix vector/tensor components."""
    _check_compatible(g, field.grid)
    moved = _move_cells(g, field.data)
    if isinstance(g, ShiftElement):
        # translations do not mix components
        return FieldSet(field.grid, field.schema, moved, field.time_index)
    vec = component_matrix(g)
    ten = tensor_matrix(g)
    out = np.empty_like(moved)
    for group in field.schema:
        span = group.span
        if group.kind == "scalar":
            out[span] = moved[span]
        elif group.kind == "vector":
            out[span] = _signed_permute(vec, moved[span])
        else:
            out[span] = _signed_permute(ten, moved[span])
    return FieldSet(field.grid, field.schema, out, field.time_index)


def apply_window(g: GroupElement, window: Window) -> Window:
    """Frame-wise action of one element on a whole input window."""
    return Window(tuple(apply(g, frame) for frame in window.frames))


_DIHEDRAL_RE = re.compile(r"^(i)?(?:r([123]?))?$")
_SHIFT_RE = re.compile(r"^t\((-?\d+),(-?\d+)\)$")


def format_element(g: GroupElement) -> str:
    """Text encoding: e, r, r2, r3, i, ir, ir2, ir3, t(sx,sy)."""
    if isinstance(g, ShiftElement):
        return f"t({g.sx},{g.sy})"
    if g.inv == 0 and g.rot == 0:
        return "e"
    word = "i" if g.inv else ""
    if g.rot:
        word += "r" if g.rot == 1 else f"r{g.rot}"
    return word


def parse_element(text: str, grid: GridSpec | None = None) -> GroupElement:
    """Inverse of :func:`format_element`; shifts need the grid for their moduli."""
    text = text.strip()
    if text == "e":
        return DihedralElement(0, 0)
    m = _SHIFT_RE.match(text)
    if m:
        if grid is None:
            raise GroupError("parsing a shift element requires the grid")
        return ShiftElement(
            int(m.group(1)) % grid.nx, int(m.group(2)) % grid.ny, grid.nx, grid.ny
        )
    m = _DIHEDRAL_RE.match(text)
    if m and (m.group(1) or m.group(2) is not None):
        rot = m.group(2)
        return DihedralElement(1 if m.group(1) else 0, int(rot) if rot else 1 if "r" in text else 0)
    raise GroupError(f"cannot parse group element {text!r}")
