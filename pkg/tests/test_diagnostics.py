import math

import numpy as np
import pytest

from srmcf.diagnostics import (DiagnosticsReport, bernstein_fields, coeff_a_derivative, divergence_consistency,
                               eps_limit_study, gradient_bound_series, minimal_surface_residual,
                               residual_from_state, rg1_coefficients, right_derivative_residual)
from srmcf.flow import FlowProblem, initial_state, run, step
from srmcf.grid import Grid, unit_box
from srmcf.group import make_model, parse_group
from srmcf.operators import coeff_a


def _linear(g):
    a = np.linspace(0.3, -0.8, g.n)
    if not g.carnot:
        a[2:] = 0.0
    return lambda p: np.tensordot(a, p, axes=1) + 0.2


def test_gradient_series_constant_and_linear():
    g = make_model("heisenberg")
    grid = unit_box(g, 9)
    r = run(FlowProblem(g, 0.5, grid, 1.0, T=0.01))
    s = gradient_bound_series(r)
    assert s.max_interior == 0.0 and s.passed
    g2 = make_model("abelian", 2)
    grid2 = unit_box(g2, 9)
    r = run(FlowProblem(g2, 1.0, grid2, lambda p: 3 * p[0] + 4 * p[1], T=0.01, steady_tol=0.0, max_steps=5))
    s = gradient_bound_series(r)
    np.testing.assert_allclose(s.interior, 5.0, rtol=1e-12)
    assert s.passed


def test_gradient_series_on_region():
    g = make_model("heisenberg")
    grid = unit_box(g, 11)
    p = FlowProblem(g, 0.5, grid, lambda x: x[0] * x[1], T=0.02, u0=0.0, snapshot_times=(0.01,))
    s = gradient_bound_series(run(p), region=grid.compact())
    assert len(s.t) == 3 and s.passed


@pytest.mark.parametrize("key", ["heisenberg", "rototranslation", "free:2", "abelian:2"])
@pytest.mark.parametrize("eps", [0.0, 0.1, 0.25, 0.5, 1.0])
def test_residuals_vanish_on_linear_solution(key, eps):
    g = parse_group(key)
    grid = Grid.for_group(g, 0.0, 1.0, 9)
    p = FlowProblem(g, eps, grid, _linear(g), steady_tol=0.0)
    s = initial_state(p)
    for k in range(g.n + 1):
        assert residual_from_state(p, s, k) <= 1e-8
    s1 = step(p, s)
    s2 = step(p, s1)
    rep = bernstein_fields([s.u, s1.u, s2.u], [0.0, s1.t, s2.t], 1, 0.5, g, eps, grid)
    assert rep.c0 == 0.0 and rep.c1 == 0.0 and rep.min_margin >= -1e-8
    if g.name.startswith("abelian"):
        assert abs(rep.min_margin) <= 1e-8
    assert minimal_surface_residual(s.u, g, eps, grid) <= 1e-9


def test_right_derivative_matches_one_dimensional_linearisation():
    g = make_model("abelian", 1)
    grid = unit_box(g, 41)
    p = FlowProblem(g, 1.0, grid, 0.0, u0=lambda x: np.sin(np.pi * x[0]))
    s0 = initial_state(p)
    s1 = step(p, s0)
    h = grid.spacing[0]

    def dx(f):
        return np.gradient(f, h, edge_order=2)

    v0, v1 = dx(s0.u), dx(s1.u)
    xi = dx(s1.u)
    uxx = dx(xi)
    a = 1 / (1 + xi ** 2)
    da = -2 * xi / (1 + xi ** 2) ** 2
    rhs = a * dx(dx(v1)) + da * dx(v1) * uxx
    region = grid.compact()
    oracle = np.abs((v1 - v0) / s1.t - rhs)[region].max()
    got = right_derivative_residual([s0.u, s1.u], [0.0, s1.t], 1, g, 1.0, grid)
    assert abs(got - oracle) <= 1e-10


def test_right_derivative_input_checks():
    g = make_model("heisenberg")
    grid = unit_box(g, 7)
    u = np.zeros(grid.shape)
    with pytest.raises(ValueError):
        right_derivative_residual([u], [0.0], 1, g, 1.0, grid)
    with pytest.raises(ValueError):
        right_derivative_residual([u, u], [0.0, 0.1], 0, g, 1.0, grid)
    with pytest.raises(ValueError):
        right_derivative_residual([u, u], [0.1, 0.0], 1, g, 1.0, grid)
    with pytest.raises(ValueError):
        right_derivative_residual([u, np.zeros((3, 3, 3))], [0.0, 0.1], 1, g, 1.0, grid)


def test_rg1_coefficients():
    assert np.all(rg1_coefficients(np.zeros(3)) == 0)
    rng = np.random.default_rng(5)
    for _ in range(20):
        xi = rng.normal(size=4)
        c = rg1_coefficients(xi)
        assert np.array_equal(c, -np.swapaxes(c, 1, 2))
        d = coeff_a_derivative(xi)
        h = 1e-6
        for hh in range(4):
            e = np.zeros(4)
            e[hh] = h
            fd = (coeff_a(xi + e) - coeff_a(xi - e)) / (2 * h)
            assert np.abs(fd - d[:, :, hh]).max() <= 1e-6


def test_bernstein_z_is_right_gradient_square():
    g = make_model("heisenberg")
    grid = unit_box(g, 9)
    p = FlowProblem(g, 0.5, grid, lambda x: x[0] * x[1], u0=0.0)
    s0 = initial_state(p)
    s1 = step(p, s0)
    rep = bernstein_fields([s0.u, s1.u], [0.0, s1.t], 2, 0.1, g, 0.5, grid)
    assert rep.z_nonnegative
    from srmcf.operators import frame_operators

    ops1 = frame_operators(g, 1.0, grid)
    z = sum(ops1.right_X(i, s1.u) ** 2 for i in range(3))
    np.testing.assert_allclose(rep.z, z, atol=1e-14)
    assert rep.min_margin >= -1e-9
    np.testing.assert_allclose(rep.w_plus + rep.w_minus, 2 * 0.1 * z, atol=1e-12)


def test_divergence_consistency():
    g = make_model("abelian", 2)
    grid = unit_box(g, 11)
    assert divergence_consistency(0.3 * grid.points[0] - grid.points[1], g, 1.0, grid) <= 2e-9
    g1 = make_model("abelian", 1)
    gaps = []
    for n in (21, 41, 81):
        grid = unit_box(g1, n)
        gaps.append(divergence_consistency(np.sin(np.pi * grid.points[0]), g1, 1.0, grid))
    orders = [math.log2(a / b) for a, b in zip(gaps, gaps[1:])]
    assert min(orders) >= 0.9


def test_divergence_consistency_heisenberg_linear_is_second_order():
    # the flux X_i u / W is not affine, so the gap is a truncation error that shrinks like h^2
    g = make_model("heisenberg")
    gaps = []
    for n in (11, 21):
        grid = unit_box(g, n)
        u = 0.3 * grid.points[0] - 0.8 * grid.points[1] + 0.5 * grid.points[2]
        gaps.append(divergence_consistency(u, g, 1.0, grid))
    assert math.log2(gaps[0] / gaps[1]) >= 1.8


def test_eps_limit_study_oracles():
    g = make_model("heisenberg")
    grid = unit_box(g, 9)
    lin = _linear(g)
    fields = {e: run(FlowProblem(g, e, grid, lin, T=0.01)).u for e in (1.0, 0.5, 0.25)}
    zero = run(FlowProblem(g, 0.0, grid, lin, T=0.01)).u
    table = eps_limit_study(fields, grid, zero)
    assert max(table.gaps) <= 1e-9 and table.zero_gap <= 1e-9
    assert len(list(table.rows())) == 3
    ga = make_model("abelian", 2)
    grid = unit_box(ga, 11)
    fields = {e: run(FlowProblem(ga, e, grid, lambda x: x[0] * x[1], T=0.01, u0=0.0)).u for e in (1.0, 0.5, 0.1)}
    table = eps_limit_study(fields, grid)
    assert max(table.gaps) <= 1e-12


def test_minimal_surface_residual():
    g = make_model("abelian", 1)
    r = run(FlowProblem(g, 1.0, unit_box(g, 41), 0.0, u0=lambda x: np.sin(np.pi * x[0]), steady_tol=1e-8))
    assert np.abs(r.u).max() <= 1e-6
    assert minimal_surface_residual(r) <= 1e-6
    gh = make_model("heisenberg")
    r = run(FlowProblem(gh, 0.0, unit_box(gh, 9), lambda x: x[0] * x[1], steady_tol=1e-6))
    assert minimal_surface_residual(r) <= 10 * 1e-6
    short = run(FlowProblem(gh, 0.5, unit_box(gh, 9), lambda x: x[0] * x[1], u0=0.0, T=1e-3))
    with pytest.raises(ValueError):
        minimal_surface_residual(short)
    with pytest.raises(ValueError):
        minimal_surface_residual(short.u)


def test_diagnostics_report_rows():
    g = make_model("heisenberg")
    grid = unit_box(g, 9)
    r = run(FlowProblem(g, 0.5, grid, lambda x: x[0] * x[1], u0=0.0, T=0.005))
    rep = DiagnosticsReport.from_run(r, rg_indices=(0, 1))
    rows = list(rep.rows())
    names = {q for _, q, _ in rows}
    assert {"sup_grad_1", "curvature_residual", "rg_residual_0", "rg_residual_1"} <= names
    assert rep.finite()
