"""Finite-difference realisations of the frame derivatives and the curvature operator.

Coordinate partials are centred second-order differences, switching to
second-order one-sided differences on non-periodic faces. Frame derivatives are
pointwise contractions of these partials with the frame coefficients, and
``X_i X_j`` is the composition of two such first-order operators.
"""
from __future__ import annotations

from functools import lru_cache

import numba as nb
import numpy as np

from .grid import Grid
from .group import EpsilonFrame, GroupModel

__all__ = [
    "partial",
    "FrameOperators",
    "frame_operators",
    "coeff_a",
    "apply_X",
    "apply_XX",
    "apply_right_X",
    "grad_eps",
    "mean_curvature_term",
    "divergence_form_term",
]


def partial(u: np.ndarray, axis: int, h: float, periodic: bool = False) -> np.ndarray:
    """Second-order accurate ``du/dx_axis``."""
    if periodic:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2.0 * h)
    n = u.shape[axis]
    if n < 3:
        raise ValueError("grid too small for the stencil")
    out = np.empty_like(u, dtype=float)

    def sl(a, b=None):
        idx = [slice(None)] * u.ndim
        idx[axis] = slice(a, b) if b is not None or a is None else a
        return tuple(idx)

    out[sl(1, n - 1)] = (u[sl(2, n)] - u[sl(0, n - 2)]) / (2.0 * h)
    out[sl(0)] = (-3.0 * u[sl(0)] + 4.0 * u[sl(1)] - u[sl(2)]) / (2.0 * h)
    out[sl(n - 1)] = (3.0 * u[sl(n - 1)] - 4.0 * u[sl(n - 2)] + u[sl(n - 3)]) / (2.0 * h)
    return out


def coeff_a(xi: np.ndarray) -> np.ndarray:
    """``a_ij(xi) = delta_ij - xi_i xi_j / (1 + |xi|^2)``.

    ``xi`` has its components on the first axis; the result has shape
    ``(k, k, *rest)``.
    """
    xi = np.asarray(xi, dtype=float)
    k = xi.shape[0]
    w2 = 1.0 + np.sum(xi * xi, axis=0)
    eye = np.eye(k).reshape((k, k) + (1,) * (xi.ndim - 1))
    return eye - xi[:, None] * xi[None, :] / w2


@nb.njit(cache=True, inline="always")
def _partial_at(u, f, i, n, stride, h, per):
    if per:
        fp = f + stride if i < n - 1 else f - (n - 1) * stride
        fm = f - stride if i > 0 else f + (n - 1) * stride
        return (u[fp] - u[fm]) / (2.0 * h)
    if 0 < i < n - 1:
        return (u[f + stride] - u[f - stride]) / (2.0 * h)
    if i == 0:
        return (-3.0 * u[f] + 4.0 * u[f + stride] - u[f + 2 * stride]) / (2.0 * h)
    return (3.0 * u[f] - 4.0 * u[f - stride] + u[f - 2 * stride]) / (2.0 * h)


@nb.njit(cache=True, inline="always")
def _advance(idx, shape):
    d = shape.size - 1
    while d >= 0:
        idx[d] += 1
        if idx[d] < shape[d]:
            return
        idx[d] = 0
        d -= 1


@nb.njit(cache=True)
def _partials_kernel(u, shape, strides, h, per):
    nd = shape.size
    out = np.empty((nd, u.size))
    idx = np.zeros(nd, dtype=np.int64)
    for f in range(u.size):
        for d in range(nd):
            out[d, f] = _partial_at(u, f, idx[d], shape[d], strides[d], h[d], per[d])
        _advance(idx, shape)
    return out


@nb.njit(cache=True, fastmath={"reassoc", "contract", "arcp"}, error_model="numpy")
def _grad_kernel(u, coeffs, rows, nzc, nzd, unit, unzc, unzd, shape, strides, h, per):
    """Frame gradient over ``rows`` (node-major) and, when ``unit`` is non-empty, the unscaled norm.

    ``coeffs[f, r, d]`` is the coefficient of ``d/dx_d`` in field ``r`` at node ``f``;
    ``nzd[r, :nzc[r]]`` lists the coordinates where field ``r`` is not identically zero.
    """
    nd, k = shape.size, rows.size
    xi = np.empty((u.size, k))
    g1 = np.empty(u.size if unit.shape[0] else 0)
    parts = np.empty(nd)
    idx = np.zeros(nd, dtype=np.int64)
    for f in range(u.size):
        for d in range(nd):
            parts[d] = _partial_at(u, f, idx[d], shape[d], strides[d], h[d], per[d])
        for a in range(k):
            r = rows[a]
            s = 0.0
            for q in range(nzc[r]):
                d = nzd[r, q]
                s += coeffs[f, r, d] * parts[d]
            xi[f, a] = s
        if unit.shape[0]:
            tot = 0.0
            for r in range(nd):
                s = 0.0
                for q in range(unzc[r]):
                    d = unzd[r, q]
                    s += unit[f, r, d] * parts[d]
                tot += s * s
            g1[f] = np.sqrt(tot)
        _advance(idx, shape)
    return xi, g1


@nb.njit(cache=True, fastmath={"reassoc", "contract", "arcp"}, error_model="numpy")
def _curvature_kernel(xi, coeffs, rows, nzc, nzd, nodes, node_idx, shape, strides, h, per):
    """``sum_a X_a xi_a - xi_a xi_b X_a xi_b / W^2`` at ``nodes``.

    With ``v_d = sum_b xi_b d_d xi_b`` the quadratic term collapses to
    ``sum_a (xi_a / W^2) sum_d c_ad v_d``, so each node needs one pass over the
    coordinate derivatives of ``xi``.
    """
    k, nd = rows.size, shape.size
    out = np.empty(nodes.size)
    dxi = np.empty((nd, k))
    v = np.empty(nd)
    for m in range(nodes.size):
        f = nodes[m]
        w2 = 1.0
        for a in range(k):
            w2 += xi[f, a] * xi[f, a]
        for d in range(nd):
            i, n, st = node_idx[m, d], shape[d], strides[d]
            c = 0.5 / h[d]
            s = 0.0
            if 0 < i < n - 1 or per[d]:
                fp = f + st if i < n - 1 else f - (n - 1) * st
                fm = f - st if i > 0 else f + (n - 1) * st
                for b in range(k):
                    t = c * (xi[fp, b] - xi[fm, b])
                    dxi[d, b] = t
                    s += t * xi[f, b]
            elif i == 0:
                for b in range(k):
                    t = c * (-3.0 * xi[f, b] + 4.0 * xi[f + st, b] - xi[f + 2 * st, b])
                    dxi[d, b] = t
                    s += t * xi[f, b]
            else:
                for b in range(k):
                    t = c * (3.0 * xi[f, b] - 4.0 * xi[f - st, b] + xi[f - 2 * st, b])
                    dxi[d, b] = t
                    s += t * xi[f, b]
            v[d] = s
        acc = 0.0
        for a in range(k):
            r = rows[a]
            xa = xi[f, a] / w2
            for q in range(nzc[r]):
                d = nzd[r, q]
                acc += coeffs[f, r, d] * (dxi[d, a] - xa * v[d])
        out[m] = acc
    return out


def _pattern(coeffs):
    """Per field, the coordinate axes where its coefficient is not identically zero."""
    nz = np.any(coeffs != 0, axis=0)  # (rows, axes)
    count = nz.sum(axis=1).astype(np.int64)
    axes = np.zeros(nz.shape, dtype=np.int64)
    for r in range(nz.shape[0]):
        hit = np.flatnonzero(nz[r])
        axes[r, :hit.size] = hit
    return count, axes


class FrameOperators:
    """Frame derivatives for one (group, eps, grid) triple.

    Coefficient arrays are evaluated once at construction.
    """

    def __init__(self, g: GroupModel, eps: float, grid: Grid):
        if grid.ndim != g.n:
            raise ValueError(f"grid dimension {grid.ndim} does not match group dimension {g.n}")
        self.group = g
        self.eps = float(eps)
        self.grid = grid
        self.frame = EpsilonFrame(g, self.eps)
        self.active = list(self.frame.active)
        pts = grid.points
        self.unit_coeffs = np.stack([g.left_coeffs(i, pts) for i in range(g.n)])
        scales = np.array([self.frame.scale(i) for i in range(g.n)])
        self.coeffs = self.unit_coeffs * scales.reshape((g.n,) + (1,) * (g.n + 1))
        self.right_coeffs = np.stack([g.right_coeffs(i, pts) for i in range(g.n)])
        # drop zero coordinate columns so that contractions skip them
        self._support = [np.flatnonzero(np.any(self.coeffs[i] != 0, axis=tuple(range(1, g.n + 1))))
                         for i in range(g.n)]
        self._rsupport = [np.flatnonzero(np.any(self.right_coeffs[i] != 0, axis=tuple(range(1, g.n + 1))))
                          for i in range(g.n)]
        npts = int(np.prod(grid.shape))
        self._shape = np.array(grid.shape, dtype=np.int64)
        self._strides = np.array([int(np.prod(grid.shape[d + 1:])) for d in range(g.n)], dtype=np.int64)
        self._h = np.array(grid.spacing, dtype=float)
        self._per = np.array(grid.periodic, dtype=np.bool_)
        self._node_coeffs = np.ascontiguousarray(np.moveaxis(self.coeffs.reshape(g.n, g.n, npts), 2, 0))
        self._nzc, self._nzd = _pattern(self._node_coeffs)
        self._node_unit = None
        self._rows = np.array(self.active, dtype=np.int64)
        self._all_nodes = np.arange(npts, dtype=np.int64)
        self._no_unit = np.zeros((0, 0, 0))
        self._no_pattern = (np.zeros(0, dtype=np.int64), np.zeros((0, 0), dtype=np.int64))
        self._node_idx = {}

    def _flat(self, u):
        return np.ascontiguousarray(u, dtype=float).reshape(-1)

    def partials_flat(self, u: np.ndarray) -> np.ndarray:
        """All coordinate partials of ``u`` as an array of shape ``(n, size)``."""
        return _partials_kernel(self._flat(u), self._shape, self._strides, self._h, self._per)

    def partials(self, u: np.ndarray) -> list:
        return list(self.partials_flat(u).reshape((self.group.n,) + self.grid.shape))

    def _grad_nodes(self, u, unit=False):
        if unit and self._node_unit is None:
            n, npts = self.group.n, int(np.prod(self.grid.shape))
            self._node_unit = np.ascontiguousarray(np.moveaxis(self.unit_coeffs.reshape(n, n, npts), 2, 0))
            self._unit_pattern = _pattern(self._node_unit)
        extra = (self._node_unit, *self._unit_pattern) if unit else (self._no_unit, *self._no_pattern)
        return _grad_kernel(self._flat(u), self._node_coeffs, self._rows, self._nzc, self._nzd, *extra,
                            self._shape, self._strides, self._h, self._per)

    def grad_flat(self, u: np.ndarray) -> np.ndarray:
        """Active frame gradient as an array of shape ``(k, size)``."""
        return np.ascontiguousarray(self._grad_nodes(u)[0].T)

    def curvature_at(self, u: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        """:meth:`mean_curvature` at the flat node indices ``nodes`` only."""
        nodes = np.asarray(nodes, dtype=np.int64)
        key = (nodes.size, int(nodes[:1].sum()), int(nodes[-1:].sum()))
        cached = self._node_idx.get(key)
        if cached is None or not np.array_equal(cached[0], nodes):
            cached = (nodes.copy(), np.ascontiguousarray(np.stack(np.unravel_index(nodes, self.grid.shape), axis=1)))
            self._node_idx[key] = cached
        return _curvature_kernel(self._grad_nodes(u)[0], self._node_coeffs, self._rows, self._nzc, self._nzd,
                                 nodes, cached[1],
                                 self._shape, self._strides, self._h, self._per)

    def grad_norms(self, u: np.ndarray):
        """Pointwise ``|grad_eps u|`` and the unscaled ``|grad_1 u|``."""
        xi, g1 = self._grad_nodes(u, unit=True)
        shape = self.grid.shape
        return np.sqrt(np.sum(xi * xi, axis=1)).reshape(shape), g1.reshape(shape)

    def _contract(self, coeff, support, parts):
        out = np.zeros(self.grid.shape)
        for k in support:
            out += coeff[k] * parts[k]
        return out

    def X(self, i: int, u: np.ndarray, parts=None) -> np.ndarray:
        parts = self.partials(u) if parts is None else parts
        return self._contract(self.coeffs[i], self._support[i], parts)

    def right_X(self, i: int, u: np.ndarray, parts=None) -> np.ndarray:
        parts = self.partials(u) if parts is None else parts
        return self._contract(self.right_coeffs[i], self._rsupport[i], parts)

    def XX(self, i: int, j: int, u: np.ndarray) -> np.ndarray:
        return self.X(i, self.X(j, u))

    def grad(self, u: np.ndarray, parts=None) -> np.ndarray:
        """Components ``X_i^eps u`` for the active indices, stacked on axis 0."""
        parts = self.partials(u) if parts is None else parts
        return np.stack([self.X(i, u, parts) for i in self.active])

    def full_grad(self, u: np.ndarray, parts=None) -> np.ndarray:
        """Gradient in the unscaled frame (the eps = 1 metric)."""
        parts = self.partials(u) if parts is None else parts
        n = self.group.n
        return np.stack([sum(self.unit_coeffs[i, k] * parts[k] for k in range(n)) for i in range(n)])

    def second(self, u: np.ndarray):
        """Return ``(xi, H)`` with ``xi_i = X_i u`` and ``H_ij = X_i X_j u`` over active indices."""
        xi = self.grad(u)
        k = len(self.active)
        hess = np.empty((k, k) + self.grid.shape)
        for b in range(k):
            parts = self.partials(xi[b])
            for a, i in enumerate(self.active):
                hess[a, b] = self.X(i, xi[b], parts)
        return xi, hess

    def mean_curvature(self, u: np.ndarray) -> np.ndarray:
        """Non-divergence form ``sum_ij a_ij(grad u) X_i X_j u``."""
        return self.curvature_at(u, self._all_nodes).reshape(self.grid.shape)

    def divergence_form(self, u: np.ndarray) -> np.ndarray:
        """``W sum_i X_i (X_i u / W)`` with ``W = sqrt(1 + |grad u|^2)``."""
        xi = self.grad(u)
        w = np.sqrt(1.0 + np.sum(xi * xi, axis=0))
        total = np.zeros(self.grid.shape)
        for a, i in enumerate(self.active):
            total += self.X(i, xi[a] / w)
        return w * total


@lru_cache(maxsize=32)
def frame_operators(g: GroupModel, eps: float, grid: Grid) -> FrameOperators:
    return FrameOperators(g, eps, grid)


def _values(u):
    return getattr(u, "values", u)


def apply_X(g: GroupModel, eps: float, i: int, u, grid: Grid) -> np.ndarray:
    return frame_operators(g, float(eps), grid).X(i, _values(u))


def apply_XX(g: GroupModel, eps: float, i: int, j: int, u, grid: Grid) -> np.ndarray:
    return frame_operators(g, float(eps), grid).XX(i, j, _values(u))


def apply_right_X(g: GroupModel, i: int, u, grid: Grid) -> np.ndarray:
    """Right-invariant derivative; the right frame is never eps-scaled."""
    return frame_operators(g, 1.0, grid).right_X(i, _values(u))


def grad_eps(g: GroupModel, eps: float, u, grid: Grid) -> np.ndarray:
    return frame_operators(g, float(eps), grid).grad(_values(u))


def mean_curvature_term(g: GroupModel, eps: float, u, grid: Grid) -> np.ndarray:
    return frame_operators(g, float(eps), grid).mean_curvature(_values(u))


def divergence_form_term(g: GroupModel, eps: float, u, grid: Grid) -> np.ndarray:
    return frame_operators(g, float(eps), grid).divergence_form(_values(u))
