"""Input validation helpers shared by the estimator, the flow driver and the CLI."""
from __future__ import annotations

import numbers

import numpy as np

from .grid import Grid

__all__ = ["check_eps", "check_field", "sample_datum", "check_positive"]


def check_eps(eps, allow_zero: bool = True) -> float:
    if not isinstance(eps, numbers.Real) or isinstance(eps, bool):
        raise TypeError(f"eps must be a real number, got {type(eps).__name__}")
    eps = float(eps)
    lo_ok = eps >= 0 if allow_zero else eps > 0
    if not (lo_ok and eps <= 1.0):
        raise ValueError(f"eps must lie in {'[0, 1]' if allow_zero else '(0, 1]'}, got {eps}")
    return eps


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_field(values, grid: Grid, name: str = "field") -> np.ndarray:
    """Coerce ``values`` to a finite float array on ``grid``."""
    values = np.asarray(getattr(values, "values", values), dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"{name} has shape {values.shape}, expected {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains NaN or Inf")
    return values


def sample_datum(phi, grid: Grid, name: str = "datum") -> np.ndarray:
    """Sample a callable datum on the grid, or validate an array datum."""
    if callable(phi):
        values = np.asarray(phi(grid.points), dtype=float)
        values = np.broadcast_to(values, grid.shape).copy()
        return check_field(values, grid, name)
    if np.isscalar(phi):
        return np.full(grid.shape, float(phi))
    return check_field(phi, grid, name).copy()
