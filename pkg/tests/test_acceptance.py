"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.sparse import diags

from srmcf import FlowProblem, Grid, compare_runs, make_model, parse_group, run, unit_box
from srmcf.barrier import boundary_gradient_check, certify_point
from srmcf.diagnostics import (
    eps_limit_study,
    gradient_bound_series,
    minimal_surface_residual,
    residual_from_state,
    rg1_coefficients,
)
from srmcf.metric import doubling_ratio
from srmcf.operators import frame_operators


def _linear(P):
    return 0.3 * P[0] - 0.7 * P[1] + 0.1


@pytest.mark.parametrize("key", ["heisenberg", "rototranslation", "free:2", "abelian:2"])
@pytest.mark.parametrize("eps", [0.0, 0.25, 1.0])
def test_c01_linear_stationarity(key, eps, acceptance):
    g = parse_group(key)
    grid = Grid.for_group(g, 0, 1, 41)
    p = FlowProblem(g, eps, grid, _linear, T=1e9, steady_tol=0.0, max_steps=1000, record_every=10)
    t0 = time.perf_counter()
    r = run(p)
    elapsed = time.perf_counter() - t0
    change = float(np.abs(r.u - p.u0_values).max())
    ok = r.state.step == 1000 and change <= 1e-8 and elapsed <= 10.0
    acceptance(1, ok, f"{key} eps={eps}: change {change:.2e}, {elapsed:.1f}s")
    assert ok


@pytest.mark.parametrize("key", ["heisenberg", "free:2", "free:3", "abelian:2", "abelian:3"])
def test_c02_discrete_antisymmetry(key, acceptance):
    g = parse_group(key)
    grid = Grid.for_group(g, -1, 1, 9 if g.n > 3 else 13)
    rng = np.random.default_rng(7)
    worst = 0.0
    for eps in (0.0, 0.25, 1.0):
        ops = frame_operators(g, eps, grid)
        act = ops.active
        for _ in range(100):
            c = rng.normal(size=g.n)
            f = np.tensordot(c, grid.points, axes=1) + rng.normal()
            h = np.array([[ops.XX(i, j, f) for j in act] for i in act])
            sym = 0.5 * (h + np.swapaxes(h, 0, 1))
            worst = max(worst, float(np.sqrt(np.sum(sym ** 2, axis=(0, 1))).max()))
    ok = worst <= 1e-9
    acceptance(2, ok, f"{key}: symmetric part {worst:.2e}")
    assert ok


def _smooth(rng, x, scale):
    k = rng.normal(0.0, scale, size=(3, x.shape[0]))
    c = rng.normal(size=3)
    ph = rng.uniform(0.0, 2 * np.pi, 3)
    return sum(c[j] * np.sin(np.tensordot(k[j], x, axes=1) + ph[j]) for j in range(3))


def test_c03_maximum_and_comparison(acceptance):
    g = make_model("heisenberg")
    grid = unit_box(g, 13)
    x = grid.points
    rng = np.random.default_rng(2024)
    order, rng_bound = 0.0, 0.0
    for i in range(20):
        eps = (1.0, 0.5, 0.25)[i % 3]
        phi = _smooth(rng, x, 1.5)
        u0 = phi + 0.5 * _smooth(rng, x, 1.5)
        bump = np.abs(_smooth(rng, x, 1.5)) * rng.uniform() + rng.uniform(0.0, 0.2)
        p = FlowProblem(g, eps, grid, phi, u0=u0, T=0.05, scheme="monotone")
        q = FlowProblem(g, eps, grid, phi + bump, u0=u0 + bump + np.abs(_smooth(rng, x, 1.5)),
                        T=0.05, scheme="monotone")
        order = max(order, compare_runs(p, q).max_violation)
        for prob in (p, q):
            rng_bound = max(rng_bound, float(run(prob).series["max_principle_violation"].max()))
    ok = order <= 1e-12 and rng_bound <= 1e-12
    acceptance(3, ok, f"ordering {order:.2e}, range {rng_bound:.2e}")
    assert ok


def _reference_1d(n=2001, T=0.1):
    x = np.linspace(0.0, 1.0, n)
    h = x[1] - x[0]

    def rhs(t, u):
        w = np.concatenate([[0.0], u, [0.0]])
        ux = (w[2:] - w[:-2]) / (2 * h)
        uxx = (w[2:] - 2 * w[1:-1] + w[:-2]) / h ** 2
        return uxx / (1 + ux ** 2)

    sparsity = diags([1, 1, 1], [-1, 0, 1], shape=(n - 2, n - 2))
    sol = solve_ivp(rhs, (0.0, T), np.sin(np.pi * x[1:-1]), method="BDF",
                    rtol=1e-11, atol=1e-13, jac_sparsity=sparsity)
    return np.concatenate([[0.0], sol.y[:, -1], [0.0]])


def test_c04_one_dimensional_oracle(acceptance):
    g = make_model("abelian", 1)
    ref = _reference_1d()[::10]
    p = FlowProblem(g, 1.0, unit_box(g, 201), 0.0, u0=lambda x: np.sin(np.pi * x[0]),
                    T=0.1, steady_tol=0.0, record_every=1000)
    r = run(p)
    err = float(np.abs(r.u - ref).max() / np.abs(ref).max())
    ok = abs(r.state.t - 0.1) < 1e-12 and err <= 1e-3
    acceptance(4, ok, f"relative sup error {err:.2e}")
    assert ok


SWEEP = (1.0, 0.5, 0.25, 0.1)


@pytest.fixture(scope="module")
def eps_sweep():
    g = make_model("heisenberg")
    grid = unit_box(g, 21)
    runs = {}
    for eps in SWEEP + (0.0,):
        runs[eps] = run(FlowProblem(g, eps, grid, lambda x: x[0] * x[1], T=0.1,
                                    steady_tol=0.0, record_every=10))
    return grid, runs


def test_c05_uniform_gradient_bound(eps_sweep, acceptance):
    _, runs = eps_sweep
    series = [gradient_bound_series(runs[e]) for e in SWEEP]
    peaks = np.array([s.max_interior for s in series])
    spread = float(peaks.max() / peaks.min() - 1.0)
    excess = max(s.max_interior / s.reference - 1.0 for s in series)
    ok = spread <= 0.2 and all(s.passed for s in series)
    acceptance(5, ok, f"spread {spread:.3f}, worst excess over reference {excess:+.3f}")
    assert ok


def test_c06_cauchy_in_eps(eps_sweep, acceptance):
    grid, runs = eps_sweep
    table = eps_limit_study({e: runs[e].u for e in SWEEP}, grid, zero_field=runs[0.0].u)
    ok = table.cauchy_decreasing and table.zero_within
    gaps = ", ".join(f"{v:.2e}" for v in table.gaps)
    acceptance(6, ok, f"gaps [{gaps}], eps=0 gap {table.zero_gap:.2e}")
    assert ok


@pytest.mark.slow
def test_c07_long_time_minimal_graph(acceptance):
    g = make_model("heisenberg")
    grid = unit_box(g, 41)
    p = FlowProblem(g, 0.0, grid, lambda x: x[0] * x[1], T=np.inf, steady_tol=1e-6,
                    max_steps=10 ** 6, record_every=100)
    t0 = time.perf_counter()
    r = run(p)
    elapsed = time.perf_counter() - t0
    resid = minimal_surface_residual(r)
    ok = r.steady and resid <= 1e-6 and elapsed <= 600.0
    acceptance(7, ok, f"{r.state.step} steps, residual {resid:.2e}, {elapsed:.0f}s")
    assert ok


BOUNDARY_POINTS = [(0, .5, .5), (1, .5, .5), (.5, 0, .5), (.5, 1, .5),
                   (0, .25, .75), (.75, 1, .25), (1, .75, .25), (.25, 0, .75)]


@pytest.mark.parametrize("eps", SWEEP)
def test_c08_barrier_certificate(eps, acceptance):
    g = make_model("heisenberg")
    grid = unit_box(g, 21)
    phi = lambda x: x[0] * x[1]  # noqa: E731
    r = run(FlowProblem(g, eps, grid, phi, T=0.1))
    fields = [s.u for s in r.snapshots]
    deviations = [u - r.problem.phi_values for u in fields]
    worst_margin, worst_ratio, ok = -np.inf, 0.0, True
    for x0 in BOUNDARY_POINTS:
        cert = certify_point(g, eps, grid, phi, x0, v=deviations)
        check = boundary_gradient_check(fields, phi, cert.spec, g, grid)
        ok &= cert.passed and check.passed
        worst_margin = max(worst_margin, cert.margin)
        worst_ratio = max(worst_ratio, check.ratio / check.bound)
    acceptance(8, ok, f"eps={eps}: worst margin {worst_margin:.2e}, ratio/(k/nu) {worst_ratio:.3f}")
    assert ok


def test_c09_doubling_uniformity(acceptance):
    g = make_model("heisenberg")
    peaks = {}
    for eps, c in ((1.0, 1.0), (0.5, 0.5), (0.1, 0.25)):
        grid = Grid.for_group(g, (-1, -1, -c), (1, 1, c), 61)
        rep = doubling_ratio(g, eps, grid, [[0, 0, 0]], [0.05, 0.1, 0.15, 0.2])
        peaks[eps] = rep.ratios[np.isfinite(rep.ratios)]
    vals = np.concatenate(list(peaks.values()))
    factor = float(vals.max() / vals.min())
    a = make_model("abelian", 2)
    flat = doubling_ratio(a, 1.0, Grid((-1, -1), (1, 1), (101, 101)), [(0, 0)],
                          [0.1, 0.15, 0.2, 0.25], stencil=5).ratios
    flat_err = float(np.abs(flat / 4.0 - 1.0).max())
    ok = factor < 2.0 and flat_err <= 0.15
    acceptance(9, ok, f"heisenberg spread factor {factor:.2f}, abelian deviation {flat_err:.3f}")
    assert ok


def test_c10_derived_equation_residuals(acceptance):
    g = make_model("heisenberg")
    phi = lambda x: np.sin(x[0]) * np.cos(x[1]) + 0.5 * x[2] * x[0]  # noqa: E731
    res = {}
    for n in (17, 33):
        r = run(FlowProblem(g, 0.5, unit_box(g, n), phi, T=0.02))
        res[n] = np.array([residual_from_state(r.problem, r.state, k) for k in (1, 2, 3)])
    orders = np.log2(res[17] / res[33])

    rng = np.random.default_rng(3)
    xi = rng.normal(size=(3, 50))
    coeffs = rg1_coefficients(xi)
    antisym = float(np.abs(coeffs + np.swapaxes(coeffs, 1, 2)).max())

    def a_of(z):
        return np.eye(3)[:, :, None] - z[:, None] * z[None, :] / (1 + np.sum(z * z, axis=0))

    step = 1e-6
    fd = np.stack([(a_of(xi + step * np.eye(3)[:, h, None]) - a_of(xi - step * np.eye(3)[:, h, None]))
                   / (2 * step) for h in range(3)], axis=2)
    fd_err = float(np.abs(coeffs - (fd - np.swapaxes(fd, 1, 2))).max())
    ok = orders.min() >= 1.0 and antisym == 0.0 and fd_err <= 1e-6
    acceptance(10, ok, f"orders {np.round(orders, 2).tolist()}, antisymmetry {antisym:.1e}, "
                       f"fd error {fd_err:.1e}")
    assert ok
