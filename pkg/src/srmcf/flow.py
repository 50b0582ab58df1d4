"""Explicit time stepping of the initial-boundary value problem.

``u_t = sum_ij a_ij(grad_eps u) X_i^eps X_j^eps u`` in the box, ``u = phi`` on the
faces and at ``t = 0`` (or a separate initial field). Two spatial schemes are
available:

``"centered"``
    the composed centred operator of :mod:`srmcf.operators`; second order,
    exact on linear data, defined for every model and every ``eps >= 0``.
``"monotone"``
    the Selling-based scheme of :mod:`srmcf.monotone`; every explicit step is a
    convex combination of neighbour values, so the discrete maximum and
    comparison principles hold to round-off. Needs ``eps > 0`` and ``n <= 3``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid
from .group import GroupModel
from .monotone import MonotoneOperator, supports_monotone
from .operators import frame_operators
from .validation import check_eps, check_field, check_positive, sample_datum

log = logging.getLogger(__name__)

__all__ = [
    "FlowProblem",
    "FlowState",
    "RunResult",
    "Snapshot",
    "cfl_dt",
    "step",
    "run",
    "compare_runs",
    "CompareReport",
    "initial_state",
]


@dataclass
class FlowProblem:
    group: GroupModel
    eps: float
    grid: Grid
    phi: object
    T: float = math.inf
    cfl_safety: float = 0.5
    steady_tol: float = 1e-7
    u0: object = None
    scheme: str = "centered"
    max_steps: int = 1_000_000
    record_every: int = 1
    snapshot_times: tuple = ()

    def __post_init__(self):
        self.eps = check_eps(self.eps)
        if self.grid.ndim != self.group.n:
            raise ValueError("grid dimension does not match the group")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.steady_tol < 0:
            raise ValueError("steady_tol must be non-negative")
        if self.scheme == "auto":
            self.scheme = "monotone" if supports_monotone(self.group, self.eps) else "centered"
        if self.scheme not in ("centered", "monotone"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "monotone" and not supports_monotone(self.group, self.eps):
            raise ValueError("monotone scheme needs eps > 0 and dimension <= 3")
        self.phi_values = sample_datum(self.phi, self.grid, "phi")
        self.u0_values = self.phi_values.copy() if self.u0 is None else sample_datum(self.u0, self.grid, "u0")
        # the lateral boundary always carries phi
        self.u0_values[self.grid.boundary] = self.phi_values[self.grid.boundary]

    @property
    def datum_range(self) -> tuple:
        """Bounds for the discrete maximum principle: extremes of the parabolic-boundary data."""
        b = self.grid.boundary
        vals = np.concatenate([self.u0_values.ravel(), self.phi_values[b]])
        return float(vals.min()), float(vals.max())


@dataclass
class FlowState:
    u: np.ndarray
    t: float = 0.0
    step: int = 0
    last_residual: float = math.inf
    dt: float = 0.0


@dataclass
class Snapshot:
    t: float
    step: int
    u: np.ndarray


@dataclass
class RunResult:
    problem: FlowProblem
    state: FlowState
    snapshots: list
    series: dict
    steady: bool
    capped: bool
    previous: np.ndarray | None = None
    initial_rate: np.ndarray | None = None

    @property
    def u(self) -> np.ndarray:
        return self.state.u

    @property
    def pair(self):
        """Last two consecutive fields and the step between them."""
        if self.previous is None:
            raise ValueError("run recorded fewer than two steps")
        return self.previous, self.state.u, self.state.dt


def initial_state(p: FlowProblem) -> FlowState:
    return FlowState(u=p.u0_values.copy())


def _frame_sup(p: FlowProblem) -> float:
    ops = frame_operators(p.group, p.eps, p.grid)
    total = 0.0
    for i in ops.active:
        total += float(np.max(np.sum(ops.coeffs[i] ** 2, axis=0)))
    return total


def cfl_dt(p: FlowProblem, s: FlowState | None = None) -> float:
    """``cfl_safety * h_min^2 / (2 sum_i sup|c_i|^2)`` over the active eps-frame."""
    bound = _frame_sup(p)
    if bound <= 0:
        raise FloatingPointError("frame coefficients vanish identically")
    dt = p.cfl_safety * p.grid.h_min ** 2 / (2.0 * bound)
    if not dt > 1e-300:
        raise FloatingPointError("time step underflow")
    return dt


class _Stepper:
    def __init__(self, p: FlowProblem):
        self.p = p
        self.mask = p.grid.interior(1)
        self.dt_cfl = cfl_dt(p)
        if p.scheme == "monotone":
            self.mono = MonotoneOperator(p.group, p.eps, p.grid)
        else:
            self.ops = frame_operators(p.group, p.eps, p.grid)
            self.nodes = np.flatnonzero(self.mask)

    def rate(self, u: np.ndarray):
        """Interior values of the discrete right-hand side and the stable dt for them."""
        if self.p.scheme == "monotone":
            vals, center = self.mono.evaluate(u)
            cmax = float(center.max()) if center.size else 0.0
            dt = self.dt_cfl if cmax == 0 else min(self.dt_cfl, self.p.cfl_safety / cmax)
            return vals, dt
        return self.ops.curvature_at(u, self.nodes), self.dt_cfl

    def advance(self, s: FlowState, dt_cap: float = math.inf) -> FlowState:
        vals, dt = self.rate(s.u)
        dt = min(dt, dt_cap)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite update at step {s.step}, t={s.t:.6g} (CFL violation or bad datum)")
        u = s.u.copy()
        u[self.mask] += dt * vals
        residual = float(np.max(np.abs(u[self.mask] - s.u[self.mask]))) / dt if vals.size else 0.0
        return FlowState(u=u, t=s.t + dt, step=s.step + 1, last_residual=residual, dt=dt)


def step(p: FlowProblem, s: FlowState) -> FlowState:
    """One explicit Euler step (boundary values stay equal to phi)."""
    return _Stepper(p).advance(s, p.T - s.t)


SERIES_KEYS = (
    "t", "step", "dt", "residual", "sup_grad_eps", "sup_grad_1_interior",
    "sup_grad_1_boundary", "max_principle_violation",
)


def _record(series, p, s, compact, lo, hi):
    ge, g1 = frame_operators(p.group, p.eps, p.grid).grad_norms(s.u)
    b = p.grid.boundary
    viol = max(float(s.u.max()) - hi, lo - float(s.u.min()), 0.0)
    row = (s.t, s.step, s.dt, s.last_residual if math.isfinite(s.last_residual) else float("nan"),
           float(ge.max()), float(g1[compact].max()) if compact.any() else 0.0,
           float(g1[b].max()) if b.any() else 0.0, viol)
    for k, v in zip(SERIES_KEYS, row):
        series[k].append(v)


def run(p: FlowProblem, callback: Callable | None = None) -> RunResult:
    """Iterate until ``t >= T``, steady state, or the step cap.

    Steady state means the sup-norm of the discrete time derivative dropped
    below ``steady_tol`` (``steady_tol = 0`` disables the test).
    """
    stepper = _Stepper(p)
    s = initial_state(p)
    compact = p.grid.compact()
    lo, hi = p.datum_range
    series = {k: [] for k in SERIES_KEYS}
    snaps = [Snapshot(0.0, 0, s.u.copy())]
    pending = sorted(t for t in p.snapshot_times if t > 0)
    init_vals, _ = stepper.rate(s.u)
    initial_rate = np.zeros(p.grid.shape)
    initial_rate[stepper.mask] = init_vals
    s.last_residual = float(np.max(np.abs(init_vals))) if init_vals.size else 0.0
    _record(series, p, s, compact, lo, hi)
    previous = None
    steady = s.last_residual < p.steady_tol
    capped = False
    while not steady and s.t < p.T * (1 - 1e-14):
        if s.step >= p.max_steps:
            capped = True
            log.warning("step cap %d reached at t=%.6g, residual %.3e", p.max_steps, s.t, s.last_residual)
            break
        cap = p.T - s.t
        if pending:
            cap = min(cap, pending[0] - s.t)
        previous = s.u
        s = stepper.advance(s, cap)
        if pending and s.t >= pending[0] * (1 - 1e-14):
            snaps.append(Snapshot(s.t, s.step, s.u.copy()))
            pending.pop(0)
        steady = s.last_residual < p.steady_tol
        if s.step % p.record_every == 0 or steady:
            _record(series, p, s, compact, lo, hi)
        if callback is not None:
            callback(s)
    if series["step"][-1] != s.step:
        _record(series, p, s, compact, lo, hi)
    if snaps[-1].step != s.step:
        snaps.append(Snapshot(s.t, s.step, s.u.copy()))
    series = {k: np.asarray(v) for k, v in series.items()}
    return RunResult(p, s, snaps, series, steady, capped, previous, initial_rate)


@dataclass
class CompareReport:
    max_violation: float
    min_gap: float
    steps: int
    violations: list = field(default_factory=list)

    @property
    def ordered(self) -> bool:
        return self.max_violation <= 1e-12


def compare_runs(p: FlowProblem, q: FlowProblem, steps: int | None = None, T: float | None = None) -> CompareReport:
    """Evolve two ordered problems in lockstep and track ``max(u_p - u_q, 0)``."""
    if p.grid != q.grid or p.group is not q.group or p.eps != q.eps or p.scheme != q.scheme:
        raise ValueError("compare_runs needs identical grid, group, eps and scheme")
    b = p.grid.boundary
    if np.any(p.u0_values > q.u0_values) or np.any(p.phi_values[b] > q.phi_values[b]):
        raise ValueError("parabolic-boundary data are not ordered")
    sp_, sq_ = _Stepper(p), _Stepper(q)
    s, r = initial_state(p), initial_state(q)
    T = min(p.T, q.T) if T is None else T
    limit = steps if steps is not None else p.max_steps
    worst = max(float(np.max(s.u - r.u)), 0.0)
    history = [worst]
    while s.step < limit and s.t < T * (1 - 1e-14):
        vp, dtp = sp_.rate(s.u)
        vq, dtq = sq_.rate(r.u)
        dt = min(dtp, dtq, T - s.t)
        u, w = s.u.copy(), r.u.copy()
        u[sp_.mask] += dt * vp
        w[sq_.mask] += dt * vq
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
            raise FloatingPointError("non-finite update in compare_runs")
        s = FlowState(u, s.t + dt, s.step + 1, dt=dt)
        r = FlowState(w, r.t + dt, r.step + 1, dt=dt)
        v = max(float(np.max(s.u - r.u)), 0.0)
        history.append(v)
        worst = max(worst, v)
    return CompareReport(worst, float(np.min(r.u - s.u)), s.step, history)
