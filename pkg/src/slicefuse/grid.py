"""Scene grid geometry and the dense BEV feature map type."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _cells(span: float, cell: float) -> int:
    n = span / cell
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9:
        raise ValueError(f"span {span} is not a whole number of {cell} m cells")
    return k


@dataclass(frozen=True)
class GridSpec:
    """Scene extent and cell sizes.

    Pillars span the whole z range; volumes use ``cell_z`` slabs.
    """

    x_range: tuple = (-51.2, 51.2)
    y_range: tuple = (-51.2, 51.2)
    z_range: tuple = (-3.0, 5.0)
    cell_xy: float = 0.2
    cell_z: float = 0.5
    channels: int = 64

    def __post_init__(self):
        for r in (self.x_range, self.y_range, self.z_range):
            if not r[1] > r[0]:
                raise ValueError(f"empty range {r}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        # validates divisibility
        self.nx, self.ny, self.nz  # noqa: B018

    @property
    def nx(self) -> int:
        return _cells(self.x_range[1] - self.x_range[0], self.cell_xy)

    @property
    def ny(self) -> int:
        return _cells(self.y_range[1] - self.y_range[0], self.cell_xy)

    @property
    def nz(self) -> int:
        return _cells(self.z_range[1] - self.z_range[0], self.cell_z)

    @property
    def pillar_height(self) -> float:
        return self.z_range[1] - self.z_range[0]

    def cell_of(self, x, y):
        """Floor-division cell indices (unclipped)."""
        i = np.floor((np.asarray(x) - self.x_range[0]) / self.cell_xy).astype(np.int64)
        j = np.floor((np.asarray(y) - self.y_range[0]) / self.cell_xy).astype(np.int64)
        return i, j

    def in_range(self, x, y, z):
        return (
            (x >= self.x_range[0]) & (x < self.x_range[1])
            & (y >= self.y_range[0]) & (y < self.y_range[1])
            & (z >= self.z_range[0]) & (z < self.z_range[1])
        )

    def cell_center_x(self, i):
        return self.x_range[0] + (np.asarray(i) + 0.5) * self.cell_xy

    def cell_center_y(self, j):
        return self.y_range[0] + (np.asarray(j) + 0.5) * self.cell_xy

    def cell_center_z(self, k):
        return self.z_range[0] + (np.asarray(k) + 0.5) * self.cell_z


@dataclass(frozen=True, eq=False)
class BevMap:
    """Dense ``(X, Y, C)`` feature grid plus per-cell occupancy mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or self.mask.shape != self.values.shape[:2]:
            raise ValueError("values must be (X, Y, C) and mask (X, Y)")

    @classmethod
    def zeros(cls, nx: int, ny: int, channels: int) -> "BevMap":
        return cls(np.zeros((nx, ny, channels)), np.zeros((nx, ny), dtype=bool))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Quadrant:
    """One quarter of the BEV grid.

    ``index = 2 * y_half + x_half`` where half 0 covers the lower (negative)
    coordinates. With the ego at the grid centre, cells at exactly ``X/2``
    belong to the upper half.
    """

    index: int

    def __post_init__(self):
        if self.index not in (0, 1, 2, 3):
            raise ValueError("quadrant index must be 0..3")

    @property
    def x_half(self) -> int:
        return self.index & 1

    @property
    def y_half(self) -> int:
        return self.index >> 1

    def bounds(self, nx: int, ny: int) -> tuple:
        """Cell ranges ``(i0, i1, j0, j1)``; needs even dims."""
        if nx % 2 or ny % 2:
            raise ValueError("grid dims must be even to split into quadrants")
        hx, hy = nx // 2, ny // 2
        return self.x_half * hx, (self.x_half + 1) * hx, self.y_half * hy, (self.y_half + 1) * hy

    @classmethod
    def of_cell(cls, i: int, j: int, nx: int, ny: int) -> "Quadrant":
        return cls(2 * int(j >= ny // 2) + int(i >= nx // 2))
