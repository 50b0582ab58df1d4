"""Quantities that monitor the a priori estimates along a computed flow.

Everything here reads fields produced by :mod:`srmcf.flow` and evaluates them
with the same finite-difference operators; nothing feeds back into the solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .flow import FlowProblem, FlowState, RunResult, _Stepper
from .grid import Grid
from .group import GroupModel
from .operators import coeff_a, frame_operators

__all__ = [
    "GradientSeries",
    "gradient_bound_series",
    "coeff_a_derivative",
    "rg1_coefficients",
    "right_derivative_residual",
    "residual_from_state",
    "BernsteinReport",
    "bernstein_fields",
    "divergence_consistency",
    "EpsLimitTable",
    "eps_limit_study",
    "minimal_surface_residual",
    "DiagnosticsReport",
]


def _values(u):
    return np.asarray(getattr(u, "values", getattr(u, "u", u)), dtype=float)


@dataclass
class GradientSeries:
    t: np.ndarray
    interior: np.ndarray
    reference: float
    tolerance: float = 0.05

    @property
    def flagged(self) -> np.ndarray:
        """Steps whose interior sup exceeds the reference by more than the tolerance."""
        return np.flatnonzero(self.interior > (1.0 + self.tolerance) * self.reference + 1e-12)

    @property
    def max_interior(self) -> float:
        return float(np.max(self.interior)) if self.interior.size else 0.0

    @property
    def passed(self) -> bool:
        return self.flagged.size == 0


def gradient_bound_series(run: RunResult, region: np.ndarray | None = None,
                          tolerance: float = 0.05) -> GradientSeries:
    """``sup_K |grad_1 u|`` per recorded step against the parabolic-boundary value.

    The reference is ``sup (|grad_1 u| + |d_t u|)`` over the parabolic boundary:
    the lateral faces at every recorded time (where ``d_t u = 0``) and the whole
    initial slice, where ``d_t u`` is the first discrete rate.
    """
    p = run.problem
    ops1 = frame_operators(p.group, 1.0, p.grid)
    if region is not None:
        region = np.asarray(region, dtype=bool)
    series = run.series
    interior = series["sup_grad_1_interior"]
    if region is not None:
        # recompute on the requested compact from the stored snapshots
        vals, ts = [], []
        for snap in run.snapshots:
            g1 = np.sqrt(np.sum(ops1.full_grad(snap.u) ** 2, axis=0))
            vals.append(float(g1[region].max()))
            ts.append(snap.t)
        interior, t = np.asarray(vals), np.asarray(ts)
    else:
        t = series["t"]
    g0 = np.sqrt(np.sum(ops1.full_grad(p.u0_values) ** 2, axis=0))
    rate0 = np.abs(run.initial_rate) if run.initial_rate is not None else 0.0
    initial = float(np.max(g0 + rate0))
    lateral = float(np.max(series["sup_grad_1_boundary"])) if len(series["sup_grad_1_boundary"]) else 0.0
    return GradientSeries(np.asarray(t), np.asarray(interior), max(initial, lateral), tolerance)


def coeff_a_derivative(xi) -> np.ndarray:
    """``D[i, j, h] = d a_ij / d xi_h`` for ``a_ij = delta_ij - xi_i xi_j / W^2``."""
    xi = np.asarray(xi, dtype=float)
    k = xi.shape[0]
    rest = xi.shape[1:]
    w2 = 1.0 + np.sum(xi * xi, axis=0)
    eye = np.eye(k).reshape((k, k) + (1,) * len(rest))
    d_ih = eye[:, None, :]  # delta_ih, indexed [i, j, h]
    d_jh = eye[None, :, :]
    xi_i = xi[:, None, None]
    xi_j = xi[None, :, None]
    xi_h = xi[None, None, :]
    return -(d_ih * xi_j + xi_i * d_jh) / w2 + 2.0 * xi_i * xi_j * xi_h / w2 ** 2


def rg1_coefficients(xi) -> np.ndarray:
    """``a^{ijh} = d a_ij / d xi_h - d a_ih / d xi_j``; antisymmetric in ``(j, h)``."""
    d = coeff_a_derivative(xi)
    return d - np.swapaxes(d, 1, 2)


def _right_field(ops1, k: int, u):
    return ops1.right_X(k - 1, u)


def right_derivative_residual(fields, times, k: int, g: GroupModel, eps: float, grid: Grid,
                              region: np.ndarray | None = None) -> float:
    """Sup-norm residual of the linearised equation for ``v_k``.

    ``v_k = X_k^r u`` for ``k >= 1`` (right frame, 1-based) and ``v_0 = d_t u``.
    Differentiating the flow gives

        d_t v = a_ij X_i X_j v + (d a_ij / d xi_h) X_h v X_i X_j u,

    checked with a backward difference in time at the last field. ``k >= 1``
    needs two consecutive fields, ``k = 0`` needs three.
    """
    fields = [_values(f) for f in fields]
    times = [float(t) for t in times]
    if len(fields) != len(times):
        raise ValueError("fields and times differ in length")
    need = 3 if k == 0 else 2
    if len(fields) < need:
        raise ValueError(f"k={k} needs {need} consecutive fields")
    if not 0 <= k <= g.n:
        raise ValueError(f"k must lie in 0..{g.n}")
    if any(f.shape != grid.shape for f in fields):
        raise ValueError("mismatched snapshots")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must increase")
    fields, times = fields[-need:], times[-need:]
    ops = frame_operators(g, eps, grid)
    ops1 = frame_operators(g, 1.0, grid)
    if k == 0:
        v1 = (fields[1] - fields[0]) / (times[1] - times[0])
        v2 = (fields[2] - fields[1]) / (times[2] - times[1])
        dt = times[2] - times[1]
    else:
        v1 = _right_field(ops1, k, fields[0])
        v2 = _right_field(ops1, k, fields[1])
        dt = times[1] - times[0]
    u = fields[-1]
    xi, hess = ops.second(u)
    a = coeff_a(xi)
    da = coeff_a_derivative(xi)
    _, hv = ops.second(v2)
    xv = ops.grad(v2)
    rhs = np.einsum("ij...,ij...->...", a, hv) + np.einsum("ijh...,h...,ij...->...", da, xv, hess)
    res = np.abs((v2 - v1) / dt - rhs)
    region = grid.compact() if region is None else np.asarray(region, dtype=bool)
    return float(res[region].max()) if region.any() else 0.0


def residual_from_state(problem: FlowProblem, state: FlowState, k: int,
                        region: np.ndarray | None = None) -> float:
    """Advance ``state`` by one or two explicit steps and evaluate the residual."""
    stepper = _Stepper(problem)
    fields, times = [state.u], [state.t]
    s = state
    for _ in range(2 if k == 0 else 1):
        s = stepper.advance(s)
        fields.append(s.u)
        times.append(s.t)
    return right_derivative_residual(fields, times, k, problem.group, problem.eps, problem.grid, region)


@dataclass
class BernsteinReport:
    k: int
    delta: float
    z: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    c0: float
    c1: float
    min_margin: float

    @property
    def z_nonnegative(self) -> bool:
        return bool(np.all(self.z >= 0))


def _divergence_operator(ops, a, w):
    """``sum_ij X_i (a_ij X_j w)`` over the active frame."""
    grad = ops.grad(w)
    total = np.zeros(w.shape)
    for p, i in enumerate(ops.active):
        flux = np.einsum("j...,j...->...", a[p], grad)
        total += ops.X(i, flux)
    return total, grad


def _fit_constants(lw, grad_sq):
    """Smallest ``C0 + C1`` (both >= 0) with ``lw >= -C0 grad_sq - C1`` everywhere."""
    need = -lw
    if np.all(need <= 0):
        return 0.0, 0.0
    mask = need > 0
    a_ub = -np.column_stack([grad_sq[mask], np.ones(mask.sum())])
    b_ub = -need[mask]
    res = linprog(c=[1.0, 1.0], A_ub=a_ub, b_ub=b_ub, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"constant fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


def bernstein_fields(fields, times, k: int, delta: float, g: GroupModel, eps: float, grid: Grid,
                     region: np.ndarray | None = None) -> BernsteinReport:
    """Build ``w_k^+- = +-v_k + delta z`` and measure ``(C0, C1)``.

    ``z = sum_s (X_s^r u)^2`` over the whole right frame and ``v_k`` as in
    :func:`right_derivative_residual`. The operator is
    ``L w = -d_t w + sum_ij X_i (a_ij(grad u) X_j w)`` with a backward time
    difference; the reported constants are the smallest pair (by ``C0 + C1``)
    making ``L w >= -C0 |grad_eps w|^2 - C1`` hold on the region for both signs.
    """
    fields = [_values(f) for f in fields]
    need = 3 if k == 0 else 2
    if len(fields) < need:
        raise ValueError(f"k={k} needs {need} consecutive fields")
    fields, times = fields[-need:], [float(t) for t in times][-need:]
    ops = frame_operators(g, eps, grid)
    ops1 = frame_operators(g, 1.0, grid)

    def z_of(u):
        return sum(ops1.right_X(s, u) ** 2 for s in range(g.n))

    if k == 0:
        v_prev = (fields[1] - fields[0]) / (times[1] - times[0])
        v_now = (fields[2] - fields[1]) / (times[2] - times[1])
    else:
        v_prev = _right_field(ops1, k, fields[0])
        v_now = _right_field(ops1, k, fields[1])
    z_prev, z_now = z_of(fields[-2]), z_of(fields[-1])
    dt = times[-1] - times[-2]
    a = coeff_a(ops.grad(fields[-1]))
    region = grid.compact() if region is None else np.asarray(region, dtype=bool)
    out = {}
    lw_all, g_all = [], []
    for sign in (1.0, -1.0):
        w_now = sign * v_now + delta * z_now
        w_prev = sign * v_prev + delta * z_prev
        div, grad = _divergence_operator(ops, a, w_now)
        lw = -(w_now - w_prev) / dt + div
        out[sign] = w_now
        lw_all.append(lw[region])
        g_all.append(np.sum(grad * grad, axis=0)[region])
    lw_cat, g_cat = np.concatenate(lw_all), np.concatenate(g_all)
    c0, c1 = _fit_constants(lw_cat, g_cat)
    margin = float(np.min(lw_cat + c0 * g_cat + c1)) if lw_cat.size else 0.0
    return BernsteinReport(k, float(delta), z_now, out[1.0], out[-1.0], c0, c1, margin)


def divergence_consistency(u, g: GroupModel, eps: float, grid: Grid, region: np.ndarray | None = None) -> float:
    """Sup gap between the divergence and non-divergence discretisations."""
    u = _values(u)
    ops = frame_operators(g, eps, grid)
    gap = np.abs(ops.divergence_form(u) - ops.mean_curvature(u))
    region = grid.compact() if region is None else np.asarray(region, dtype=bool)
    return float(gap[region].max()) if region.any() else 0.0


@dataclass
class EpsLimitTable:
    eps: list
    gaps: list  # ||u_eps_i - u_eps_{i+1}|| for consecutive pairs
    zero_gap: float | None = None

    @property
    def cauchy_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def zero_within(self) -> bool:
        """``||u_{eps_min} - u_0|| <= 2 * last gap``."""
        if self.zero_gap is None or not self.gaps:
            return True
        return self.zero_gap <= 2.0 * self.gaps[-1]

    def rows(self):
        for (e1, e2), gap in zip(zip(self.eps, self.eps[1:]), self.gaps):
            yield (e1, e2, gap)
        if self.zero_gap is not None:
            yield (self.eps[-1], 0.0, self.zero_gap)


def eps_limit_study(fields: dict, grid: Grid, zero_field=None, region: np.ndarray | None = None) -> EpsLimitTable:
    """Sup-norm gaps between fields at consecutive eps (sorted descending)."""
    region = grid.compact() if region is None else np.asarray(region, dtype=bool)
    eps = sorted((float(e) for e in fields), reverse=True)
    vals = {float(e): _values(f) for e, f in fields.items()}
    gaps = [float(np.max(np.abs(vals[a] - vals[b])[region])) for a, b in zip(eps, eps[1:])]
    zero_gap = None
    if zero_field is not None:
        zero_gap = float(np.max(np.abs(vals[eps[-1]] - _values(zero_field))[region]))
    return EpsLimitTable(eps, gaps, zero_gap)


def minimal_surface_residual(run_or_field, g: GroupModel | None = None, eps: float | None = None,
                             grid: Grid | None = None) -> float:
    """``||sum a_ij X_i X_j u||_inf`` over interior nodes of a terminal field."""
    if isinstance(run_or_field, RunResult):
        if not run_or_field.steady:
            raise ValueError("run did not reach the steady tolerance")
        p = run_or_field.problem
        g, eps, grid, u = p.group, p.eps, p.grid, run_or_field.u
    else:
        if g is None or eps is None or grid is None:
            raise ValueError("group, eps and grid are required for a bare field")
        u = _values(run_or_field)
    h = frame_operators(g, eps, grid).mean_curvature(u)
    mask = grid.interior(1)
    return float(np.max(np.abs(h[mask]))) if mask.any() else 0.0


@dataclass
class DiagnosticsReport:
    """Per-step series plus per-checkpoint quantities of one run."""

    eps: float
    series: dict
    checkpoints: list = field(default_factory=list)

    @classmethod
    def from_run(cls, run: RunResult, rg_indices=(), comparison=None) -> "DiagnosticsReport":
        p = run.problem
        series = {
            "t": run.series["t"],
            "sup_grad_eps": run.series["sup_grad_eps"],
            "sup_grad_1": run.series["sup_grad_1_interior"],
            "sup_dt": run.series["residual"],
            "max_principle_violation": run.series["max_principle_violation"],
        }
        if comparison is not None:
            series["comparison_violation"] = np.asarray(comparison, dtype=float)
        checkpoints = []
        for snap in run.snapshots:
            entry = {"t": snap.t, "curvature_residual": minimal_surface_residual(snap.u, p.group, p.eps, p.grid)}
            checkpoints.append(entry)
        if rg_indices:
            last = checkpoints[-1]
            for k in rg_indices:
                last[f"rg_residual_{k}"] = residual_from_state(p, run.state, k)
        return cls(p.eps, series, checkpoints)

    def rows(self):
        """Tidy ``(t, quantity, value)`` rows."""
        t = self.series["t"]
        for name, vals in self.series.items():
            if name == "t":
                continue
            for ti, v in zip(t, vals):
                yield (float(ti), name, float(v))
        for entry in self.checkpoints:
            for name, v in entry.items():
                if name != "t":
                    yield (float(entry["t"]), name, float(v))

    def finite(self) -> bool:
        return all(math.isfinite(v) for _, _, v in self.rows())
