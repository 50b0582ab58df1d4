"""Lattice approximations of the eps-distance, ball volumes and Hoelder seminorms.

Distances are shortest paths on the grid graph whose edges join every node to
its neighbours in a ``(2r+1)^n`` stencil (``r = 1`` or ``2``). An edge with
coordinate displacement ``v`` costs ``sqrt(v^T G_eps(midpoint) v)`` where
``G_eps = (A A^T)^{-1}`` and ``A`` holds the eps-frame as columns, so the
eps-frame is orthonormal. Shortest paths come from ``scipy.sparse.csgraph``.

The graph distance overestimates the true one by the stencil's directional
resolution. In strongly anisotropic regimes (small eps on a coarse vertical
spacing) balls can be thinner than one cell; :func:`doubling_ratio` skips radii
whose balls do not span ``min_cells`` nodes along every axis.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.stats import qmc

from .grid import Grid
from .group import EpsilonFrame, GroupModel
from .operators import frame_operators
from .validation import check_eps

log = logging.getLogger(__name__)

__all__ = [
    "DistanceField",
    "MetricGraph",
    "metric_graph",
    "distance_map",
    "DoublingReport",
    "doubling_ratio",
    "parabolic_distance",
    "HolderEstimate",
    "holder_seminorm",
    "holder_c1_seminorm",
]


def stencil_offsets(n: int, reach: int = 1) -> np.ndarray:
    """Primitive integer offsets in ``[-reach, reach]^n``, one of each +-pair."""
    out = []
    for v in itertools.product(range(-reach, reach + 1), repeat=n):
        v = np.array(v, dtype=np.int64)
        if not v.any() or np.gcd.reduce(np.abs(v)) != 1:
            continue
        if v[np.flatnonzero(v)[0]] > 0:
            out.append(v)
    return np.array(out, dtype=np.int64).reshape(-1, n)


@dataclass
class DistanceField:
    grid: Grid
    source: tuple
    eps: float
    values: np.ndarray

    def at(self, point) -> float:
        return float(self.values[self.grid.index_of(point)])


class MetricGraph:
    """Weighted lattice graph for one (group, eps, grid, stencil)."""

    def __init__(self, g: GroupModel, eps: float, grid: Grid, stencil: int = 3):
        eps = check_eps(eps)
        if eps == 0:
            raise ValueError("distance needs eps > 0; d_eps increases to d_0, so use a small eps instead")
        if stencil not in (3, 5):
            raise ValueError("stencil must be 3 or 5")
        if grid.ndim != g.n:
            raise ValueError("grid dimension does not match the group")
        self.group, self.eps, self.grid, self.stencil = g, eps, grid, stencil
        self.matrix = self._build()
        self._cache: dict = {}

    def _build(self):
        g, grid = self.group, self.grid
        n = g.n
        shape = np.array(grid.shape)
        h = np.array(grid.spacing)
        lo = np.array(grid.lo)
        frame = EpsilonFrame(g, self.eps)
        idx = np.indices(grid.shape).reshape(n, -1)
        rows, cols, weights = [], [], []
        for v in stencil_offsets(n, self.stencil // 2):
            dst = idx + v[:, None]
            ok = np.ones(dst.shape[1], dtype=bool)
            for c in range(n):
                if grid.periodic[c]:
                    dst[c] %= shape[c]
                else:
                    ok &= (dst[c] >= 0) & (dst[c] < shape[c])
            src = idx[:, ok]
            mid = lo[:, None] + h[:, None] * (src + 0.5 * v[:, None])
            a = np.stack([frame.coeffs(i, mid) for i in range(n)], axis=1)
            a = np.moveaxis(a, -1, 0)
            disp = np.broadcast_to(v * h, (a.shape[0], n))[..., None]
            # |A^{-1} v| = sqrt(v^T (A A^T)^{-1} v)
            w = np.linalg.norm(np.linalg.solve(a, disp)[..., 0], axis=1)
            rows.append(np.ravel_multi_index(src, grid.shape))
            cols.append(np.ravel_multi_index(dst[:, ok], grid.shape))
            weights.append(w)
        size = int(np.prod(shape))
        w = np.concatenate(weights)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise FloatingPointError("degenerate edge weights; frame singular on the grid")
        return coo_matrix((w, (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)).tocsr()

    def flat_index(self, point=None, index=None) -> int:
        if index is None:
            point = np.asarray(point, dtype=float)
            index = self.grid.index_of(point)
            node = np.array([a[i] for a, i in zip(self.grid.axes, index)])
            if np.any(np.abs(node - point) > 1e-6 * np.array(self.grid.spacing)):
                raise ValueError(f"source {tuple(point)} is not a grid node")
        return int(np.ravel_multi_index(tuple(index), self.grid.shape))

    def distances(self, flat: int) -> np.ndarray:
        """Flat distance vector from node ``flat`` (cached)."""
        if flat not in self._cache:
            self._cache[flat] = dijkstra(self.matrix, directed=False, indices=flat)
        return self._cache[flat]

    def many(self, flats) -> np.ndarray:
        """Distance rows for several sources in one call."""
        flats = np.asarray(flats, dtype=np.int64)
        missing = [int(f) for f in np.unique(flats) if int(f) not in self._cache]
        if missing:
            rows = dijkstra(self.matrix, directed=False, indices=missing)
            for f, row in zip(missing, np.atleast_2d(rows)):
                self._cache[f] = row
        return np.stack([self._cache[int(f)] for f in flats])

    def field(self, point=None, index=None) -> DistanceField:
        flat = self.flat_index(point, index)
        src = tuple(int(i) for i in np.unravel_index(flat, self.grid.shape))
        return DistanceField(self.grid, src, self.eps, self.distances(flat).reshape(self.grid.shape))


@lru_cache(maxsize=8)
def metric_graph(g: GroupModel, eps: float, grid: Grid, stencil: int = 3) -> MetricGraph:
    return MetricGraph(g, eps, grid, stencil)


def distance_map(g: GroupModel, eps: float, grid: Grid, source, stencil: int = 3) -> DistanceField:
    """Graph approximation of ``d_eps(source, .)`` on every node."""
    return metric_graph(g, float(eps), grid, stencil).field(source)


@dataclass
class DoublingReport:
    eps: float
    radii: np.ndarray
    ratios: np.ndarray  # (samples, radii); nan where skipped
    volumes: np.ndarray  # (samples, radii, 2): |B(r)|, |B(2r)|
    skipped: list = field(default_factory=list)

    @property
    def max(self) -> float:
        if np.all(np.isnan(self.ratios)):
            raise ValueError("no resolved radius in the sweep")
        return float(np.nanmax(self.ratios))

    def rows(self):
        """``(eps, r, max ratio over samples)`` per resolved radius."""
        for j, r in enumerate(self.radii):
            col = self.ratios[:, j]
            if np.any(np.isfinite(col)):
                yield (self.eps, float(r), float(np.nanmax(col)))


def doubling_ratio(g: GroupModel, eps: float, grid: Grid, samples, radii, stencil: int = 3,
                   min_cells: int = 4) -> DoublingReport:
    """``|B(x, 2r)| / |B(x, r)|`` for every sample point and radius.

    Ball measure is the node count times the cell volume. A radius is admitted
    only if ``2r`` is at most half the metric inradius seen from the sample and
    the ball ``B(x, r)`` spans at least ``min_cells`` node spacings on every axis.
    """
    mg = metric_graph(g, float(eps), grid, stencil)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    idx = np.indices(grid.shape).reshape(grid.ndim, -1)
    bmask = grid.boundary.ravel()
    ratios = np.full((len(samples), len(radii)), np.nan)
    vols = np.full((len(samples), len(radii), 2), np.nan)
    skipped = []
    for s, x in enumerate(samples):
        d = mg.distances(mg.flat_index(x))
        inradius = float(d[bmask].min()) if bmask.any() else math.inf
        for j, r in enumerate(radii):
            if 2 * r > 0.5 * inradius:
                skipped.append((s, float(r), "2r exceeds half the inradius"))
                continue
            ball = d < r
            count = int(ball.sum())
            if count <= 1:
                raise ValueError(f"ball of radius {r} is empty at sample {s}: below grid resolution")
            span = [int(np.ptp(idx[c][ball])) for c in range(grid.ndim)]
            if min(span) < min_cells:
                skipped.append((s, float(r), f"ball spans {span} cells"))
                continue
            big = int(np.sum(d < 2 * r))
            ratios[s, j] = big / count
            vols[s, j] = (count * grid.cell_volume, big * grid.cell_volume)
    for s, r, why in skipped:
        log.debug("doubling: sample %d radius %.4g skipped (%s)", s, r, why)
    return DoublingReport(float(eps), radii, ratios, vols, skipped)


def parabolic_distance(d_xy, t, s):
    """``max(d, sqrt|t - s|)``."""
    d_xy = np.asarray(d_xy, dtype=float)
    if np.any(d_xy < 0):
        raise ValueError("distance must be non-negative")
    out = np.maximum(d_xy, np.sqrt(np.abs(np.asarray(t, dtype=float) - np.asarray(s, dtype=float))))
    return float(out) if out.ndim == 0 else out


@dataclass
class HolderEstimate:
    alpha: float
    seminorm: float
    sup_norm: float
    eps: float
    pairs: int = 0

    @property
    def norm(self) -> float:
        return self.seminorm + self.sup_norm


def _as_samples(u):
    """Normalise to a list of ``(t, field)``."""
    if isinstance(u, np.ndarray):
        return [(0.0, u)]
    out = []
    for item in u:
        if hasattr(item, "u") and hasattr(item, "t"):
            out.append((float(item.t), np.asarray(item.u, dtype=float)))
        else:
            t, f = item
            out.append((float(t), np.asarray(f, dtype=float)))
    if not out:
        raise ValueError("no samples")
    return out


def holder_seminorm(u, metric: MetricGraph, alpha: float, region: np.ndarray | None = None,
                    n_pairs: int = 200_000, n_sources: int = 64, seed: int = 0,
                    max_distance: float | None = None) -> HolderEstimate:
    """Sampled ``sup |u(p) - u(q)| / dist(p, q)^alpha`` with the parabolic pseudo-distance.

    ``u`` is one field or a sequence of ``(t, field)`` samples. Pairs are drawn
    by a scrambled Sobol sequence (seeded): each pair picks a source among
    ``n_sources`` region nodes, a target region node and two sample times.
    Coincident pairs are skipped.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    samples = _as_samples(u)
    grid = metric.grid
    region = grid.compact(0.15, 2) if region is None else np.asarray(region, dtype=bool)
    if region.shape != grid.shape:
        raise ValueError("region mask does not match the grid")
    nodes = np.flatnonzero(region.ravel())
    if len(nodes) < 2:
        raise ValueError("region has fewer than two nodes")
    fields = np.stack([f.ravel() for _, f in samples])
    times = np.array([t for t, _ in samples])
    sup = float(np.max(np.abs(fields[:, nodes])))

    rng = np.random.default_rng(seed)
    src_pick = qmc.Sobol(1, scramble=True, seed=rng).random(max(1, min(n_sources, len(nodes))))
    sources = np.unique(nodes[np.minimum((src_pick[:, 0] * len(nodes)).astype(int), len(nodes) - 1)])
    dims = 4 if len(samples) > 1 else 2
    m = int(2 ** math.ceil(math.log2(max(n_pairs, 2))))
    pts = qmc.Sobol(dims, scramble=True, seed=rng).random(m)[:n_pairs]
    si = np.minimum((pts[:, 0] * len(sources)).astype(int), len(sources) - 1)
    ti = nodes[np.minimum((pts[:, 1] * len(nodes)).astype(int), len(nodes) - 1)]
    if dims == 4:
        ka = np.minimum((pts[:, 2] * len(samples)).astype(int), len(samples) - 1)
        kb = np.minimum((pts[:, 3] * len(samples)).astype(int), len(samples) - 1)
    else:
        ka = kb = np.zeros(len(pts), dtype=int)
    dist_rows = metric.many(sources)
    d = dist_rows[si, ti]
    dt = parabolic_distance(d, times[ka], times[kb])
    dt = np.atleast_1d(dt)
    keep = dt > 0
    if max_distance is not None:
        keep &= dt <= max_distance
    diff = np.abs(fields[ka, sources[si]] - fields[kb, ti])
    if not keep.any():
        return HolderEstimate(float(alpha), 0.0, sup, metric.eps, 0)
    q = diff[keep] / dt[keep] ** alpha
    return HolderEstimate(float(alpha), float(q.max()), sup, metric.eps, int(keep.sum()))


def holder_c1_seminorm(u, metric: MetricGraph, alpha: float, **kwargs) -> HolderEstimate:
    """``C^{1,alpha}``-type estimate: the Hoelder seminorms of the horizontal
    derivatives ``X_1 u .. X_m u`` summed, with ``sup|u| + sum sup|X_i u|`` as
    the sup part."""
    samples = _as_samples(u)
    g, grid = metric.group, metric.grid
    ops = frame_operators(g, metric.eps, grid)
    region = kwargs.get("region")
    region = grid.compact(0.15, 2) if region is None else region
    semi = 0.0
    sup = max(float(np.max(np.abs(f[region]))) for _, f in samples)
    pairs = 0
    for i in range(g.m):
        deriv = [(t, ops.X(i, f)) for t, f in samples]
        est = holder_seminorm(deriv, metric, alpha, **kwargs)
        semi += est.seminorm
        sup += est.sup_norm
        pairs = est.pairs
    return HolderEstimate(float(alpha), semi, sup, metric.eps, pairs)
