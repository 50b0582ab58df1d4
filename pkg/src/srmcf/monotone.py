"""Monotone explicit discretisation of ``sum_ij a_ij X_i X_j u``.

In coordinates the operator is ``tr(M D^2 u) + B . grad u`` with
``M = F a F^T`` (``F`` the matrix of eps-frame columns) and
``B_l = sum_ij a_ij (X_i c_j)_l``. The second-order part is split with Selling's
decomposition, ``M = sum_k rho_k e_k e_k^T`` with ``rho_k >= 0`` and integer
offsets ``e_k``; every term becomes a three-point second difference along a
lattice direction. The drift is upwinded. All neighbour weights are therefore
non-negative, which is what gives the discrete maximum and comparison
principles for the explicit step.

Offsets that leave the box are shortened to the face crossing, where the
(Dirichlet) field value is read by multilinear interpolation on the face.
Selling's algorithm is available for dimensions 1 to 3 and needs ``M``
positive definite, i.e. ``eps > 0``.
"""
from __future__ import annotations

import numba as nb
import numpy as np

from .grid import Grid
from .group import GroupModel
from .operators import FrameOperators, frame_operators

__all__ = ["selling", "MonotoneOperator", "supports_monotone"]

MAX_SELLING_ITER = 10_000


def supports_monotone(g: GroupModel, eps: float) -> bool:
    return g.n <= 3 and eps > 0


@nb.njit(cache=True)
def _dot(a, dmat, b, n):
    s = 0.0
    for k in range(n):
        for l in range(n):
            s += a[k] * dmat[k, l] * b[l]
    return s


@nb.njit(cache=True)
def _selling_reduce(dmat, sb, n):
    """Make the superbase ``sb`` (n+1 rows) obtuse for ``dmat`` in place."""
    for _ in range(MAX_SELLING_ITER):
        changed = False
        for i in range(n + 1):
            for j in range(i + 1, n + 1):
                if _dot(sb[i], dmat, sb[j], n) > 1e-14 * (abs(dmat[0, 0]) + 1e-300):
                    if n == 2:
                        k = 3 - i - j
                        for c in range(n):
                            bi = sb[i, c]
                            sb[k, c] = bi - sb[j, c]
                            sb[i, c] = -bi
                    else:
                        for c in range(n):
                            bi = sb[i, c]
                            for k in range(n + 1):
                                if k != i and k != j:
                                    sb[k, c] += bi
                            sb[i, c] = -bi
                    changed = True
                    break
            if changed:
                break
        if not changed:
            return True
    return False


@nb.njit(cache=True)
def _selling_terms(dmat, sb, n, rho, off):
    """Weights and offsets from an obtuse superbase; returns the term count."""
    if n == 1:
        rho[0] = dmat[0, 0]
        off[0, 0] = 1
        return 1
    t = 0
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            rho[t] = -_dot(sb[i], dmat, sb[j], n)
            if n == 2:
                k = 3 - i - j
                off[t, 0] = -sb[k, 1]
                off[t, 1] = sb[k, 0]
            else:
                k0 = -1
                k1 = -1
                for k in range(4):
                    if k != i and k != j:
                        if k0 < 0:
                            k0 = k
                        else:
                            k1 = k
                a = sb[k0]
                b = sb[k1]
                off[t, 0] = a[1] * b[2] - a[2] * b[1]
                off[t, 1] = a[2] * b[0] - a[0] * b[2]
                off[t, 2] = a[0] * b[1] - a[1] * b[0]
            t += 1
    return t


def _initial_superbase(n):
    sb = np.zeros((n + 1, n), dtype=np.int64)
    for k in range(n):
        sb[k + 1, k] = 1
    sb[0, :] = -1
    return sb


def selling(dmat: np.ndarray):
    """Selling decomposition of one SPD matrix (dimension 1 to 3).

    Returns ``(rho, offsets)`` with ``dmat == sum_k rho[k] outer(e_k, e_k)``.
    """
    dmat = np.ascontiguousarray(dmat, dtype=float)
    n = dmat.shape[0]
    if n > 3:
        raise ValueError("Selling decomposition is implemented for dimension <= 3")
    sb = _initial_superbase(n)
    if not _selling_reduce(dmat, sb, n):
        raise ValueError("Selling's algorithm did not terminate; matrix not positive definite?")
    nt = max(1, n * (n + 1) // 2)
    rho = np.zeros(nt)
    off = np.zeros((nt, n), dtype=np.int64)
    t = _selling_terms(dmat, sb, n, rho, off)
    return rho[:t], off[:t]


@nb.njit(cache=True)
def _interp(u, shape, periodic, y, n, base, frac):
    """Multilinear interpolation at fractional index ``y``."""
    for c in range(n):
        yc = y[c]
        if periodic[c]:
            yc = yc % shape[c]
            fl = int(np.floor(yc))
            base[c] = fl
            frac[c] = yc - fl
        else:
            if yc < 0.0:
                yc = 0.0
            if yc > shape[c] - 1:
                yc = shape[c] - 1.0
            fl = int(np.floor(yc))
            if fl >= shape[c] - 1:
                fl = shape[c] - 2
            base[c] = fl
            frac[c] = yc - fl
            if frac[c] < 1e-12:
                frac[c] = 0.0
            elif frac[c] > 1.0 - 1e-12:
                frac[c] = 1.0
    total = 0.0
    for corner in range(1 << n):
        w = 1.0
        flat = 0
        for c in range(n):
            bit = (corner >> c) & 1
            wc = frac[c] if bit else 1.0 - frac[c]
            if wc == 0.0:
                w = 0.0
                break
            w *= wc
            idx = base[c] + bit
            if periodic[c]:
                idx = idx % shape[c]
            flat = flat * shape[c] + idx
        if w != 0.0:
            total += w * u[flat]
    return total


@nb.njit(cache=True)
def _arm(u, shape, periodic, p, e, sign, n, y, base, frac):
    """Value and arm length (in units of |e|) in direction ``sign * e`` from node ``p``."""
    s = 1.0
    for c in range(n):
        if periodic[c]:
            continue
        d = sign * e[c]
        if d > 0:
            room = (shape[c] - 1 - p[c]) / d
        elif d < 0:
            room = p[c] / (-d)
        else:
            continue
        if room < s:
            s = room
    if s >= 1.0:
        flat = 0
        for c in range(n):
            idx = p[c] + sign * e[c]
            if periodic[c]:
                idx = idx % shape[c]
            flat = flat * shape[c] + idx
        return u[flat], 1.0
    for c in range(n):
        y[c] = p[c] + s * sign * e[c]
    return _interp(u, shape, periodic, y, n, base, frac), s


@nb.njit(cache=True)
def _apply(u, shape, periodic, nodes, xi, frame, drift_sym, hinv, cache, out, center):
    npts = nodes.shape[0]
    n = shape.shape[0]
    kk = xi.shape[0]
    has_drift = drift_sym.shape[0] > 0
    nt = max(1, n * (n + 1) // 2)
    rho = np.zeros(nt)
    off = np.zeros((nt, n), dtype=np.int64)
    y = np.empty(n)
    base = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    a = np.empty((kk, kk))
    dmat = np.empty((n, n))
    strides = np.empty(n, dtype=np.int64)
    any_periodic = False
    acc_s = 1
    for c in range(n - 1, -1, -1):
        strides[c] = acc_s
        acc_s *= shape[c]
        if periodic[c]:
            any_periodic = True
    ok = True
    for q in range(npts):
        p = nodes[q]
        # distance (in nodes) to the nearest face; arms within it need no shortening
        margin = shape[0]
        for c in range(n):
            d = min(p[c], shape[c] - 1 - p[c])
            if d < margin:
                margin = d
        w2 = 1.0
        for i in range(kk):
            w2 += xi[i, q] * xi[i, q]
        for i in range(kk):
            for j in range(kk):
                a[i, j] = (1.0 if i == j else 0.0) - xi[i, q] * xi[j, q] / w2
        # M = F a F^T scaled by 1/(h_k h_l)
        for k in range(n):
            for l in range(k, n):
                acc = 0.0
                for i in range(kk):
                    fi = frame[i, k, q]
                    if fi == 0.0:
                        continue
                    for j in range(kk):
                        acc += fi * a[i, j] * frame[j, l, q]
                acc *= hinv[k] * hinv[l]
                dmat[k, l] = acc
                dmat[l, k] = acc
        flat0 = 0
        for c in range(n):
            flat0 = flat0 * shape[c] + p[c]
        u0 = u[flat0]
        sb = cache[q]
        if n > 1:
            if not _selling_reduce(dmat, sb, n):
                ok = False
        t = _selling_terms(dmat, sb, n, rho, off)
        val = 0.0
        cw = 0.0
        for k in range(t):
            r = rho[k]
            if r <= 0.0:
                continue
            if not any_periodic:
                reach = 0
                jump = 0
                for c in range(n):
                    reach = max(reach, abs(off[k, c]))
                    jump += off[k, c] * strides[c]
                if reach <= margin:
                    val += r * (u[flat0 + jump] + u[flat0 - jump] - 2.0 * u0)
                    cw += 2.0 * r
                    continue
            up, sp_ = _arm(u, shape, periodic, p, off[k], 1, n, y, base, frac)
            um, sm = _arm(u, shape, periodic, p, off[k], -1, n, y, base, frac)
            val += r * 2.0 / (sp_ + sm) * ((up - u0) / sp_ + (um - u0) / sm)
            cw += r * 2.0 / (sp_ * sm)
        if has_drift:
            for c in range(n):
                b = 0.0
                for i in range(kk):
                    for j in range(kk):
                        b += a[i, j] * drift_sym[i, j, c, q]
                b *= hinv[c]
                if b == 0.0:
                    continue
                stride = 1
                for cc in range(c + 1, n):
                    stride *= shape[cc]
                step = 1 if b > 0 else -1
                idx = p[c] + step
                if periodic[c]:
                    idx = idx % shape[c]
                nb_flat = flat0 + (idx - p[c]) * stride
                val += abs(b) * (u[nb_flat] - u0)
                cw += abs(b)
        out[q] = val
        center[q] = cw
    return ok


class MonotoneOperator:
    """Selling-based monotone evaluation of the curvature operator on one grid."""

    def __init__(self, g: GroupModel, eps: float, grid: Grid):
        if not supports_monotone(g, eps):
            raise ValueError("monotone scheme needs dimension <= 3 and eps > 0")
        self.ops: FrameOperators = frame_operators(g, float(eps), grid)
        self.grid = grid
        self.mask = grid.interior(1)
        self.nodes = np.ascontiguousarray(np.argwhere(self.mask), dtype=np.int64)
        npts = len(self.nodes)
        n = g.n
        self.shape = np.array(grid.shape, dtype=np.int64)
        self.periodic = np.array(grid.periodic, dtype=np.bool_)
        self.cache = np.broadcast_to(_initial_superbase(n), (npts, n + 1, n)).copy()
        self._hinv = 1.0 / np.array(grid.spacing)
        self._idx = (slice(None),) + tuple(self.nodes.T)
        # symmetric part of (X_i c_j)_l, the only part that survives contraction with a
        pts = grid.points[(slice(None),) + tuple(self.nodes.T)]
        act = self.ops.active
        scale = np.array([self.ops.frame.scale(i) for i in range(n)])
        jac = [g.left_jacobian(i, pts) for i in range(n)]
        coef = np.stack([g.left_coeffs(i, pts) for i in range(n)])
        t = np.zeros((len(act), len(act), n, npts))
        for a, i in enumerate(act):
            for b, j in enumerate(act):
                # (X_i c_j)_l = sum_k c_ik d_k c_jl
                t[a, b] = scale[i] * scale[j] * np.einsum("k...,lk...->l...", coef[i], jac[j])
        drift_sym = 0.5 * (t + t.transpose(1, 0, 2, 3))
        if not np.any(np.abs(drift_sym) > 1e-14):
            drift_sym = np.zeros((0, 0, n, npts))
        self._drift_sym = np.ascontiguousarray(drift_sym)
        self._frame = np.ascontiguousarray(np.stack([self.ops.coeffs[i][self._idx] for i in act]))

    def evaluate(self, u: np.ndarray):
        """Return ``(L u on interior nodes, center weights)`` as flat arrays."""
        xi = np.ascontiguousarray(self.ops.grad(u)[self._idx])
        out = np.empty(len(self.nodes))
        center = np.empty(len(self.nodes))
        ok = _apply(np.ascontiguousarray(u, dtype=float).ravel(), self.shape, self.periodic,
                    self.nodes, xi, self._frame, self._drift_sym, self._hinv, self.cache, out, center)
        if not ok:
            raise FloatingPointError("Selling reduction failed; coefficient matrix not positive definite")
        return out, center

    def __call__(self, u: np.ndarray) -> np.ndarray:
        out, _ = self.evaluate(u)
        full = np.zeros(self.grid.shape)
        full[self.mask] = out
        return full
