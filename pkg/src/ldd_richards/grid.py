"""Uniform cell-centred mesh of a rectangle split by a vertical interface.

Cells of subdomain ``l`` are numbered row-major, ``index = j * n_lx + i``
with ``i`` counting columns left to right and ``j`` rows bottom to top.
The full-domain numbering places every cell of the first subdomain before
every cell of the second one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "DecomposedGrid",
    "CellField",
    "BoundaryCondition",
    "BoundarySpec",
    "Topology",
    "build_grid",
    "interface_pairing",
    "l2_cell_norm",
    "linf_cell_norm",
    "l2_interface_norm",
    "SIDES",
]

SIDES = ("left", "right", "bottom", "top")

_REL = 1e-12


def _cell_count(extent: float, h: float, what: str) -> int:
    if not h > 0:
        raise ValueError(f"cell size for {what} must be positive")
    ratio = extent / h
    n = int(round(ratio))
    if n < 1:
        raise ValueError(f"{what}: zero cells")
    if abs(ratio - n) > _REL * max(1.0, ratio):
        raise ValueError(f"{what}: extent {extent} is not a multiple of {h}")
    return n


@dataclass(frozen=True)
class DecomposedGrid:
    x_min: float
    x_split: float
    x_max: float
    y_min: float
    y_max: float
    dx: float
    dy: float
    n1x: int
    n2x: int
    ny: int

    def nx(self, l: int) -> int:
        return self.n1x if l == 1 else self.n2x

    def n_cells(self, l: int | None = None) -> int:
        if l is None:
            return (self.n1x + self.n2x) * self.ny
        return self.nx(l) * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def x0(self, l: int) -> float:
        return self.x_min if l == 1 else self.x_split

    def cell_centers(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        nx = self.nx(l)
        xs = self.x0(l) + (np.arange(nx) + 0.5) * self.dx
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xs, ys)
        return X.ravel(), Y.ravel()

    def split(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full-domain vector to the two subdomain vectors."""
        n1 = self.n_cells(1)
        return values[:n1], values[n1:]

    def topology(self, part: int | str) -> "Topology":
        return _topology(self, part)


def build_grid(x_min: float = -1.0, x_split: float = 0.0, x_max: float = 1.0,
               y_min: float = 0.0, y_max: float = 1.0, dx: float = 0.02,
               dy: float | None = None) -> DecomposedGrid:
    """Mesh ``(x_min, x_split) x (y_min, y_max)`` and ``(x_split, x_max) x (y_min, y_max)``.

    ``dy`` defaults to ``dx``. Raises ``ValueError`` when a cell size does
    not divide its extent.
    """
    dy = dx if dy is None else dy
    if not (x_min < x_split < x_max and y_min < y_max):
        raise ValueError("degenerate geometry")
    n1x = _cell_count(x_split - x_min, dx, "subdomain 1 width")
    n2x = _cell_count(x_max - x_split, dx, "subdomain 2 width")
    ny = _cell_count(y_max - y_min, dy, "height")
    return DecomposedGrid(x_min, x_split, x_max, y_min, y_max, dx, dy, n1x, n2x, ny)


@dataclass
class CellField:
    """Cell values on one subdomain."""

    values: np.ndarray
    subdomain_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class BoundaryCondition:
    """``kind`` is ``"dirichlet"`` (pressure) or ``"neumann"`` (inflow -F.n)."""

    kind: str
    value: Callable[[np.ndarray, np.ndarray, float], np.ndarray]

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    def __call__(self, x, y, t):
        return np.broadcast_to(np.asarray(self.value(x, y, t), dtype=float), np.shape(x))


class BoundarySpec(dict):
    """Mapping side name -> :class:`BoundaryCondition` for ``left/right/bottom/top``."""

    def __init__(self, conditions: Mapping[str, BoundaryCondition]):
        super().__init__(conditions)
        unknown = set(self) - set(SIDES)
        if unknown:
            raise ValueError(f"unknown boundary sides {sorted(unknown)}")
        missing = [s for s in SIDES if s not in self]
        if missing:
            raise ValueError(f"exterior faces not covered: {missing}")

    @classmethod
    def dirichlet(cls, fn) -> "BoundarySpec":
        return cls({s: BoundaryCondition("dirichlet", fn) for s in SIDES})


@dataclass(frozen=True)
class Topology:
    """Face lists of one subdomain (``part`` 1 or 2) or of the full domain.

    Interior faces carry their two cells (``left`` precedes ``right`` along
    the face normal, which is ``+x`` or ``+y``), the face length and the two
    centre-to-face distances. Boundary faces carry the cell, the face
    geometry, the outward side and the face centre. Interface faces exist
    only on subdomain topologies and are ordered by increasing ``y``.
    """

    part: int | str
    n: int
    xc: np.ndarray
    yc: np.ndarray
    material: np.ndarray
    volume: float
    # interior faces
    f_left: np.ndarray
    f_right: np.ndarray
    f_area: np.ndarray
    f_dleft: np.ndarray
    f_dright: np.ndarray
    f_is_gamma: np.ndarray
    # exterior boundary faces
    b_cell: np.ndarray
    b_area: np.ndarray
    b_dist: np.ndarray
    b_x: np.ndarray
    b_y: np.ndarray
    b_side: np.ndarray
    # interface faces (subdomains only)
    i_cell: np.ndarray
    i_area: np.ndarray
    i_dist: np.ndarray
    i_x: np.ndarray
    i_y: np.ndarray
    i_normal: float

    @cached_property
    def side_masks(self) -> dict[str, np.ndarray]:
        return {s: self.b_side == s for s in SIDES}


def _block(grid: DecomposedGrid, l: int, offset: int):
    nx, ny = grid.nx(l), grid.ny
    idx = offset + np.arange(nx * ny).reshape(ny, nx)
    return idx


def _topology(grid: DecomposedGrid, part: int | str) -> Topology:
    dx, dy = grid.dx, grid.dy
    if part in (1, 2):
        parts = (part,)
    elif part == "full":
        parts = (1, 2)
    else:
        raise ValueError(f"unknown part {part!r}")

    xc, yc, mat, blocks = [], [], [], {}
    offset = 0
    for l in parts:
        x, y = grid.cell_centers(l)
        xc.append(x)
        yc.append(y)
        mat.append(np.full(x.size, l, dtype=int))
        blocks[l] = _block(grid, l, offset)
        offset += x.size
    xc = np.concatenate(xc)
    yc = np.concatenate(yc)
    mat = np.concatenate(mat)

    fl, fr, fa, fdl, fdr, fg = [], [], [], [], [], []

    def add_faces(a, b, area, dl, dr, gamma=False):
        a = a.ravel()
        b = b.ravel()
        fl.append(a)
        fr.append(b)
        fa.append(np.full(a.size, area))
        fdl.append(np.full(a.size, dl))
        fdr.append(np.full(a.size, dr))
        fg.append(np.full(a.size, gamma))

    for l in parts:
        B = blocks[l]
        add_faces(B[:, :-1], B[:, 1:], dy, dx / 2, dx / 2)
        add_faces(B[:-1, :], B[1:, :], dx, dy / 2, dy / 2)
    if part == "full":
        add_faces(blocks[1][:, -1], blocks[2][:, 0], dy, dx / 2, dx / 2, gamma=True)

    bc, ba, bd, bx, by, bs = [], [], [], [], [], []

    def add_boundary(cells, area, dist, x, y, side):
        cells = cells.ravel()
        bc.append(cells)
        ba.append(np.full(cells.size, area))
        bd.append(np.full(cells.size, dist))
        bx.append(np.broadcast_to(x, cells.shape).astype(float))
        by.append(np.broadcast_to(y, cells.shape).astype(float))
        bs.append(np.full(cells.size, side, dtype=object))

    ys = grid.y_min + (np.arange(grid.ny) + 0.5) * dy
    for l in parts:
        B = blocks[l]
        x0 = grid.x0(l)
        xs = x0 + (np.arange(grid.nx(l)) + 0.5) * dx
        add_boundary(B[0, :], dx, dy / 2, xs, grid.y_min, "bottom")
        add_boundary(B[-1, :], dx, dy / 2, xs, grid.y_max, "top")
        if l == 1:
            add_boundary(B[:, 0], dy, dx / 2, grid.x_min, ys, "left")
        if l == 2:
            add_boundary(B[:, -1], dy, dx / 2, grid.x_max, ys, "right")

    if part in (1, 2):
        B = blocks[part]
        icell = B[:, -1] if part == 1 else B[:, 0]
        i_normal = 1.0 if part == 1 else -1.0
        i_area = np.full(grid.ny, dy)
        i_dist = np.full(grid.ny, dx / 2)
        i_x = np.full(grid.ny, grid.x_split)
        i_y = ys.copy()
    else:
        icell = np.zeros(0, dtype=int)
        i_normal = 0.0
        i_area = i_dist = i_x = i_y = np.zeros(0)

    cat = np.concatenate
    return Topology(
        part=part, n=xc.size, xc=xc, yc=yc, material=mat, volume=dx * dy,
        f_left=cat(fl), f_right=cat(fr), f_area=cat(fa), f_dleft=cat(fdl),
        f_dright=cat(fdr), f_is_gamma=cat(fg),
        b_cell=cat(bc), b_area=cat(ba), b_dist=cat(bd), b_x=cat(bx), b_y=cat(by),
        b_side=cat(bs),
        i_cell=np.asarray(icell, dtype=int), i_area=i_area, i_dist=i_dist, i_x=i_x,
        i_y=i_y, i_normal=i_normal,
    )


def interface_pairing(grid: DecomposedGrid) -> list[tuple[int, int, float]]:
    """``(cell in subdomain 1, cell in subdomain 2, face centre y)`` per interface face.

    Cell indices are local to each subdomain; faces are ordered by ``y``.
    """
    out = []
    for j in range(grid.ny):
        c1 = j * grid.n1x + grid.n1x - 1
        c2 = j * grid.n2x
        out.append((c1, c2, grid.y_min + (j + 0.5) * grid.dy))
    return out


def _values(field) -> np.ndarray:
    if isinstance(field, CellField):
        return field.values
    if isinstance(field, (tuple, list)):
        return np.concatenate([_values(f) for f in field])
    return np.asarray(field, dtype=float)


def _expected_size(grid: DecomposedGrid, field) -> int | None:
    if isinstance(field, CellField):
        return grid.n_cells(field.subdomain_index)
    if isinstance(field, (tuple, list)) and len(field) == 2:
        return grid.n_cells()
    return None


def l2_cell_norm(field, grid: DecomposedGrid | None = None, cell_area: float | None = None) -> float:
    """``sqrt(sum v**2 dx dy)`` over the cells of ``field``.

    ``field`` is a :class:`CellField`, a pair of them (or of arrays) covering
    both subdomains, or a plain array. Either ``grid`` or ``cell_area`` gives
    the cell measure.
    """
    v = _values(field)
    if grid is not None:
        size = _expected_size(grid, field)
        if size is not None and v.size != size:
            raise ValueError(f"field has {v.size} values, grid expects {size}")
        cell_area = grid.cell_area
    if cell_area is None:
        raise ValueError("need grid or cell_area")
    return float(np.sqrt(np.sum(v * v) * cell_area))


def linf_cell_norm(field, grid: DecomposedGrid | None = None) -> float:
    v = _values(field)
    if grid is not None:
        size = _expected_size(grid, field)
        if size is not None and v.size != size:
            raise ValueError(f"field has {v.size} values, grid expects {size}")
    return float(np.max(np.abs(v))) if v.size else 0.0


def l2_interface_norm(values, grid: DecomposedGrid | None = None, dy: float | None = None) -> float:
    v = np.asarray(values, dtype=float)
    if grid is not None:
        if v.size != grid.ny:
            raise ValueError(f"{v.size} interface values for {grid.ny} faces")
        dy = grid.dy
    if dy is None:
        raise ValueError("need grid or dy")
    return float(np.sqrt(np.sum(v * v) * dy))
