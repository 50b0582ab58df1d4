"""Uniform Cartesian lattices and sampled fields."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .group import GroupModel

__all__ = ["Grid", "ScalarField", "unit_box"]

MIN_POINTS = 5


@dataclass(frozen=True)
class Grid:
    """Box ``[lo, hi]`` sampled with ``shape`` points per axis.

    Periodic axes exclude the right endpoint, so their spacing is
    ``(hi - lo) / N``; other axes include both endpoints.
    """

    lo: tuple
    hi: tuple
    shape: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        shape = tuple(int(v) for v in self.shape)
        periodic = tuple(bool(v) for v in self.periodic) or (False,) * len(shape)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periodic", periodic)
        if not (len(lo) == len(hi) == len(shape) == len(periodic)):
            raise ValueError("lo, hi, shape and periodic must have equal length")
        for ax, (a, b, n) in enumerate(zip(lo, hi, shape)):
            if not b > a:
                raise ValueError(f"axis {ax}: hi must exceed lo")
            if n < MIN_POINTS:
                raise ValueError(f"axis {ax}: need at least {MIN_POINTS} points for the stencil, got {n}")

    @classmethod
    def for_group(cls, g: GroupModel, lo, hi, shape) -> "Grid":
        n = g.n
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        shape = np.broadcast_to(np.asarray(shape, dtype=int), (n,))
        periodic = [False] * n
        for ax, period in g.periodic_axes.items():
            periodic[ax] = True
            if not np.isclose(hi[ax] - lo[ax], period):
                # the periodic axis always spans exactly one period
                lo[ax], hi[ax] = 0.0, period
        return cls(tuple(lo), tuple(hi), tuple(shape), tuple(periodic))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> tuple:
        return tuple(
            (b - a) / (n if p else n - 1)
            for a, b, n, p in zip(self.lo, self.hi, self.shape, self.periodic)
        )

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple:
        return tuple(a + h * np.arange(n) for a, h, n in zip(self.lo, self.spacing, self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of every node, shape ``(ndim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    def interior(self, layers: int = 1) -> np.ndarray:
        """Mask of nodes at least ``layers`` nodes away from non-periodic faces."""
        mask = np.ones(self.shape, dtype=bool)
        for ax, p in enumerate(self.periodic):
            if p or layers <= 0:
                continue
            idx = [slice(None)] * self.ndim
            idx[ax] = slice(0, layers)
            mask[tuple(idx)] = False
            idx[ax] = slice(self.shape[ax] - layers, None)
            mask[tuple(idx)] = False
        return mask

    @cached_property
    def boundary(self) -> np.ndarray:
        return ~self.interior(1)

    def compact(self, shrink: float = 0.15, min_layers: int = 2) -> np.ndarray:
        """Interior compact set: the box shrunk by ``shrink`` of its width per side."""
        mask = self.interior(min_layers)
        for ax, p in enumerate(self.periodic):
            if p:
                continue
            x = self.points[ax]
            width = self.hi[ax] - self.lo[ax]
            tol = 1e-12 * width
            mask &= (x >= self.lo[ax] + shrink * width - tol) & (x <= self.hi[ax] - shrink * width + tol)
        return mask

    def index_of(self, point) -> tuple:
        """Nearest node index to ``point``."""
        point = np.asarray(point, dtype=float)
        idx = []
        for ax in range(self.ndim):
            k = int(round((point[ax] - self.lo[ax]) / self.spacing[ax]))
            if self.periodic[ax]:
                k %= self.shape[ax]
            idx.append(min(max(k, 0), self.shape[ax] - 1))
        return tuple(idx)

    def refine(self) -> "Grid":
        """Halve the spacing on every axis."""
        shape = tuple(2 * n if p else 2 * n - 1 for n, p in zip(self.shape, self.periodic))
        return Grid(self.lo, self.hi, shape, self.periodic)


def unit_box(g: GroupModel, n_points: int) -> Grid:
    """The box ``[0, 1]^n`` (one full period on periodic axes)."""
    return Grid.for_group(g, 0.0, 1.0, n_points)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")
