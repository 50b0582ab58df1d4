"""Estimator-style wrapper around the flow solver.

``fit`` solves the flow for a boundary datum, ``predict`` interpolates the
solution at arbitrary points and ``transform`` returns the interpolated
eps-gradient. Hyper-parameters follow the ``get_params`` / ``set_params``
conventions so the object works with ``sklearn.base.clone``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .flow import FlowProblem, run
from .grid import Grid
from .group import GroupModel, parse_group
from .operators import frame_operators

__all__ = ["MeanCurvatureFlow"]


class MeanCurvatureFlow(BaseEstimator):
    """Graph mean curvature flow on a box of a step-2 group.

    Parameters
    ----------
    group : str
        ``"heisenberg"``, ``"rototranslation"``, ``"free:<m>"`` or ``"abelian:<n>"``.
    eps : float
        Regularisation in ``[0, 1]``.
    lo, hi : float or sequence
        Box corners.
    n_points : int or sequence
        Nodes per axis.
    T : float
        Final time; ``inf`` runs to the steady tolerance.
    """

    def __init__(self, group="heisenberg", eps=1.0, lo=0.0, hi=1.0, n_points=21, T=math.inf,
                 steady_tol=1e-7, cfl_safety=0.5, scheme="centered", max_steps=1_000_000):
        self.group = group
        self.eps = eps
        self.lo = lo
        self.hi = hi
        self.n_points = n_points
        self.T = T
        self.steady_tol = steady_tol
        self.cfl_safety = cfl_safety
        self.scheme = scheme
        self.max_steps = max_steps

    def _model(self) -> GroupModel:
        return self.group if isinstance(self.group, GroupModel) else parse_group(str(self.group))

    def fit(self, phi, u0=None):
        """Solve with boundary datum ``phi`` (callable, scalar or grid array)."""
        model = self._model()
        grid = Grid.for_group(model, self.lo, self.hi, self.n_points)
        if isinstance(phi, np.ndarray) and phi.shape != grid.shape:
            raise ValueError(f"phi has shape {phi.shape}, the grid is {grid.shape}")
        problem = FlowProblem(model, self.eps, grid, phi, T=self.T, cfl_safety=self.cfl_safety,
                              steady_tol=self.steady_tol, u0=u0, scheme=self.scheme,
                              max_steps=int(self.max_steps))
        self.result_ = run(problem)
        self.model_ = model
        self.grid_ = grid
        self.solution_ = self.result_.u
        self.steady_ = self.result_.steady
        self.n_steps_ = self.result_.state.step
        self.t_ = self.result_.state.t
        self.n_features_in_ = model.n
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise NotFittedError("call fit before using this estimator")

    def _points(self, X) -> np.ndarray:
        X = check_array(X, dtype=float, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} coordinates per point, got {X.shape[1]}")
        X = X.copy()
        g = self.grid_
        for ax, p in enumerate(g.periodic):
            if p:
                X[:, ax] = g.lo[ax] + np.mod(X[:, ax] - g.lo[ax], g.hi[ax] - g.lo[ax])
            elif np.any((X[:, ax] < g.lo[ax] - 1e-12) | (X[:, ax] > g.hi[ax] + 1e-12)):
                raise ValueError(f"points outside the box on axis {ax}")
        return X

    def _interpolate(self, values, X):
        g = self.grid_
        axes, vals = [], values
        for ax, p in enumerate(g.periodic):
            a = g.axes[ax]
            if p:
                # close the period so interpolation wraps
                a = np.append(a, g.hi[ax])
                vals = np.concatenate([vals, np.take(vals, [0], axis=ax)], axis=ax)
            axes.append(a)
        return RegularGridInterpolator(tuple(axes), vals, method="linear")(X)

    def predict(self, X) -> np.ndarray:
        """Solution values at points ``X`` of shape ``(n_samples, n)``."""
        self._check_fitted()
        return self._interpolate(self.solution_, self._points(X))

    def transform(self, X) -> np.ndarray:
        """Interpolated eps-gradient ``(X_i^eps u)`` at ``X``; one column per active field."""
        self._check_fitted()
        pts = self._points(X)
        grad = frame_operators(self.model_, float(self.eps), self.grid_).grad(self.solution_)
        return np.column_stack([self._interpolate(c, pts) for c in grad])

    def fit_predict(self, phi, X, u0=None) -> np.ndarray:
        return self.fit(phi, u0).predict(X)

    def fit_transform(self, phi, X, u0=None) -> np.ndarray:
        return self.fit(phi, u0).transform(X)

    def score(self, X, y) -> float:
        """Negative sup-norm error of :meth:`predict` against reference values ``y``."""
        y = np.asarray(y, dtype=float).ravel()
        return -float(np.max(np.abs(self.predict(X) - y)))
