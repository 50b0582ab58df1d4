import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srmcf.grid import Grid, ScalarField, unit_box
from srmcf.group import make_model, parse_group
from srmcf.operators import (apply_right_X, apply_X, apply_XX, coeff_a, divergence_form_term,
                             frame_operators, grad_eps, mean_curvature_term, partial)

from conftest import MODEL_KEYS


def _grid(g, n=9, lo=-1.0, hi=1.0):
    return Grid.for_group(g, lo, hi, n)


def _symbolic(g, expr, grid):
    return sp.lambdify(g.symbols, expr, "numpy")


def _apply_symbolic(g, coeffs, expr):
    return sum(c * sp.diff(expr, x) for c, x in zip(coeffs, g.symbols))


def test_constant_is_killed(model):
    grid = _grid(model)
    u = np.full(grid.shape, 3.5)
    for i in range(model.n):
        assert np.abs(apply_X(model, 1.0, i, u, grid)).max() == 0.0
    assert np.abs(mean_curvature_term(model, 0.5, u, grid)).max() == 0.0


def test_abelian_quadratic_exact():
    g = make_model("abelian", 2)
    grid = _grid(g, 41)
    x1, x2 = grid.points
    assert np.abs(apply_X(g, 1.0, 0, x1 ** 2, grid) - 2 * x1).max() <= 1e-12
    assert np.abs(apply_XX(g, 1.0, 0, 1, x1 * x2, grid) - 1.0).max() <= 1e-12


def test_scalar_field_input():
    g = make_model("abelian", 1)
    grid = unit_box(g, 11)
    f = ScalarField(grid, grid.points[0] ** 2)
    np.testing.assert_allclose(apply_X(g, 1.0, 0, f, grid), 2 * grid.points[0], atol=1e-12)


@pytest.mark.parametrize("key", ["heisenberg", "free:2", "free:3", "abelian:3"])
@pytest.mark.parametrize("eps", [0.0, 0.4, 1.0])
def test_polynomial_exactness_degree_two(key, eps):
    g = parse_group(key)
    grid = _grid(g, 7)
    rng = np.random.default_rng(7)
    xs = g.symbols
    expr = sum(rng.normal() * a * b for a in xs for b in xs) + sum(rng.normal() * a for a in xs)
    ops = frame_operators(g, eps, grid)
    u = _symbolic(g, expr, grid)(*grid.points)
    for i in ops.active:
        ci = [ops.frame.scale(i) * c for c in g.left[i]]
        xi = _apply_symbolic(g, ci, expr)
        ref = np.broadcast_to(_symbolic(g, xi, grid)(*grid.points), grid.shape)
        assert np.abs(ops.X(i, u) - ref).max() <= 1e-10
        for j in ops.active:
            cj = [ops.frame.scale(j) * c for c in g.left[j]]
            # X_i X_j of a quadratic is a polynomial of degree <= 2 in these frames
            ref2 = _apply_symbolic(g, ci, _apply_symbolic(g, cj, expr))
            ref2 = np.broadcast_to(_symbolic(g, ref2, grid)(*grid.points), grid.shape)
            assert np.abs(ops.XX(i, j, u) - ref2).max() <= 1e-10


def _linear_coeffs(g, rng):
    a = rng.normal(size=g.n)
    if not g.carnot:
        # the flat graphs of the roto-translation model are planes in (x1, x2)
        a[2:] = 0.0
    return a


def test_symmetric_contraction_of_linear_vanishes(model, rng):
    grid = _grid(model)
    for eps in (0.0, 0.3, 1.0):
        ops = frame_operators(model, eps, grid)
        idx = list(ops.active)
        a = _linear_coeffs(model, rng)
        u = np.tensordot(a, grid.points, axes=1) + rng.normal()
        s = rng.normal(size=(len(idx), len(idx)))
        s = s + s.T
        if model.carnot:
            total = sum(s[p, q] * ops.XX(i, j, u) for p, i in enumerate(idx) for q, j in enumerate(idx))
            assert np.abs(total).max() <= 1e-10
        assert np.abs(ops.mean_curvature(u)).max() <= 1e-10


def test_rototranslation_planes_are_flat_but_not_antisymmetric():
    g = make_model("rototranslation")
    grid = _grid(g)
    ops = frame_operators(g, 1.0, grid)
    u = 0.7 * grid.points[0] - 0.2 * grid.points[1]
    assert np.abs(ops.XX(1, 0, u)).max() > 0.1
    assert np.abs(ops.XX(0, 1, u)).max() <= 1e-12
    assert np.abs(ops.mean_curvature(u)).max() <= 1e-10


@pytest.mark.parametrize("key", ["heisenberg", "free:2", "free:3", "abelian:2"])
def test_linear_second_derivatives_antisymmetric(key, rng):
    g = parse_group(key)
    grid = _grid(g)
    ops = frame_operators(g, 1.0, grid)
    for _ in range(5):
        u = np.tensordot(_linear_coeffs(g, rng), grid.points, axes=1)
        h = np.array([[ops.XX(i, j, u) for j in range(g.n)] for i in range(g.n)])
        assert np.abs(h + np.swapaxes(h, 0, 1)).max() <= 1e-10


def test_grad_eps_oracles():
    g = make_model("heisenberg")
    grid = _grid(g)
    assert np.abs(grad_eps(g, 0.5, np.zeros(grid.shape), grid)).max() == 0
    ge = grad_eps(g, 0.0, grid.points[2], grid)
    assert ge.shape[0] == 2
    np.testing.assert_allclose(ge[:, 4, 4, 4], [0.0, 0.0], atol=1e-14)
    assert grad_eps(g, 0.5, grid.points[2], grid).shape[0] == 3


def test_coeff_a_oracles():
    np.testing.assert_array_equal(coeff_a(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(coeff_a(np.array([1.0, 0.0, 0.0])), np.diag([0.5, 1.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-50, 50)))
def test_coeff_a_spectrum(xi):
    a = coeff_a(xi)
    np.testing.assert_allclose(a, a.T, atol=0)
    lam = np.linalg.eigvalsh(a)
    lower = 1.0 / (1.0 + xi @ xi)
    assert lam.min() >= lower * (1 - 1e-9) and lam.max() <= 1 + 1e-12


@pytest.mark.parametrize("key", MODEL_KEYS)
def test_right_and_left_commute(key):
    g = parse_group(key)
    grid = _grid(g, 25 if g.n <= 3 else 9, -0.5, 0.5)
    x = grid.points
    u = np.sin(x[0]) * np.cos(x[-1]) + 0.3 * x[0] ** 2
    if g.n > 1:
        u = u + np.cos(x[1] - 0.2 * x[0])
    inner = grid.interior(3 if g.n <= 3 else 2)
    for i in range(g.n):
        for j in range(g.n):
            lhs = apply_right_X(g, i, apply_X(g, 1.0, j, u, grid), grid)
            rhs = apply_X(g, 1.0, j, apply_right_X(g, i, u, grid), grid)
            # the discrete commutator is O(h^2) on smooth data
            assert np.abs(lhs - rhs)[inner].max() <= max(grid.spacing) ** 2


def test_commutator_exact_on_quadratics(model, rng):
    if not model.carnot:
        pytest.skip("trigonometric frame coefficients")
    grid = _grid(model, 7)
    x = grid.points
    for _ in range(3):
        q = rng.normal(size=(model.n, model.n))
        u = np.einsum("ij,i...,j...->...", q, x, x)
        for i in range(model.n):
            for j in range(model.n):
                lhs = apply_right_X(model, i, apply_X(model, 1.0, j, u, grid), grid)
                rhs = apply_X(model, 1.0, j, apply_right_X(model, i, u, grid), grid)
                assert np.abs(lhs - rhs).max() <= 1e-10


def test_first_derivative_convergence_order():
    g = make_model("heisenberg")
    errs = []
    for n in (11, 21, 41):
        grid = _grid(g, n)
        x1, x2, x3 = grid.points
        u = np.sin(x1 + x3) * np.cos(x2)
        exact = np.cos(x1 + x3) * np.cos(x2) - x2 * np.cos(x1 + x3) * np.cos(x2)
        errs.append(np.abs(apply_X(g, 1.0, 0, u, grid) - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.9


def test_partial_periodic_and_small_grid():
    x = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    d = partial(np.sin(x), 0, x[1] - x[0], periodic=True)
    assert np.abs(d - np.cos(x)).max() < 2e-3
    with pytest.raises(ValueError):
        partial(np.zeros(2), 0, 0.1)


def test_mean_curvature_matches_composed_form(rng):
    g = make_model("free", 2)
    grid = _grid(g, 11)
    ops = frame_operators(g, 0.5, grid)
    x = grid.points
    u = np.sin(x[0] * x[1]) + x[2] ** 2
    xi, hess = ops.second(u)
    w2 = 1 + np.sum(xi * xi, axis=0)
    ref = np.einsum("ii...->...", hess) - np.einsum("i...,ij...,j...->...", xi, hess, xi) / w2
    assert np.abs(ops.mean_curvature(u) - ref).max() <= 1e-12
    nodes = np.flatnonzero(grid.interior(1))
    np.testing.assert_allclose(ops.curvature_at(u, nodes), ref.ravel()[nodes], atol=1e-12)


def test_divergence_form_abelian_linear_exact():
    g = make_model("abelian", 2)
    grid = _grid(g)
    u = 0.4 * grid.points[0] - 1.3 * grid.points[1]
    assert np.abs(divergence_form_term(g, 1.0, u, grid)).max() <= 1e-9


def test_grid_mismatch_rejected():
    g = make_model("heisenberg")
    with pytest.raises(ValueError):
        frame_operators(g, 1.0, _grid(make_model("abelian", 2)))
