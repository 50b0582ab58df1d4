"""Boundary barriers ``w = psi(Pi)`` and their numerical certification.

``Pi(x) = sum_i a_i y_i`` with ``y = x_0^{-1} x`` the chart centred at the
boundary point ``x_0``, and ``psi(s) = log(1 + k s) / nu`` solves
``psi'' + nu psi'^2 = 0``. For a linear ``Pi`` the matrix ``X_i X_j Pi`` is
antisymmetric on Carnot models, so

    Q(w) = a_ij(grad(w + phi)) X_i X_j (w + phi)
         = -nu psi'^2 a_ij X_i Pi X_j Pi + a_ij X_i X_j phi,

and a large ``nu`` makes ``Q(w)`` negative. The certificate evaluates ``Q(w)``
with the same discrete operator the flow uses and compares it with the measured
size of the negative term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, ScalarField
from .group import GroupModel
from .metric import distance_map
from .operators import frame_operators
from .validation import check_eps, check_positive, sample_datum

__all__ = [
    "BarrierSpec",
    "Certificate",
    "psi",
    "psi_prime",
    "psi_second",
    "face_plane",
    "plane_values",
    "build_barrier",
    "neighborhood_mask",
    "datum_c2_norm",
    "default_parameters",
    "certify_subsolution",
    "certify_point",
    "boundary_gradient_check",
    "GradientCheck",
    "CERTIFICATE_COLUMNS",
]

CERTIFICATE_COLUMNS = ("boundary_point", "eps", "k", "nu", "rho", "maxQ", "margin", "pass")


def psi(s, k: float, nu: float):
    s = np.asarray(s, dtype=float)
    arg = 1.0 + k * s
    if np.any(arg <= 0):
        raise ValueError("psi is defined only where 1 + k s > 0")
    out = np.log(arg) / nu
    return float(out) if out.ndim == 0 else out


def psi_prime(s, k: float, nu: float):
    return k / (nu * (1.0 + k * np.asarray(s, dtype=float)))


def psi_second(s, k: float, nu: float):
    return -(k ** 2) / (nu * (1.0 + k * np.asarray(s, dtype=float)) ** 2)


@dataclass(frozen=True)
class BarrierSpec:
    """Barrier at ``x0`` for the plane with chart coefficients ``a``."""

    x0: tuple
    a: tuple
    k: float
    nu: float
    rho: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not np.isclose(np.sum(a * a), 1.0, rtol=1e-9):
            raise ValueError("plane coefficients must satisfy sum a_i^2 = 1")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "a", tuple(float(v) for v in a))
        for name in ("k", "nu", "rho"):
            check_positive(getattr(self, name), name)

    @property
    def gradient_bound(self) -> float:
        """``psi'(0) = k / nu``, the slope bound delivered by the barrier."""
        return self.k / self.nu


def _chart_linear(g: GroupModel, x0) -> np.ndarray:
    """``L`` with ``chart(x0, x) = L (x - x0)``; exact for affine charts."""
    x0 = np.asarray(x0, dtype=float)
    base = g.chart(x0, x0[:, None])[:, 0]
    cols = [g.chart(x0, (x0 + np.eye(g.n)[k])[:, None])[:, 0] - base for k in range(g.n)]
    return np.stack(cols, axis=1)


def face_plane(g: GroupModel, grid: Grid, x0, axis: int | None = None) -> tuple:
    """Chart coefficients of the supporting plane of the box face through ``x0``.

    The plane is the inward Euclidean face normal, rewritten in the chart centred
    at ``x0`` and normalised. ``axis`` picks the face when ``x0`` is on an edge.
    """
    x0 = np.asarray(x0, dtype=float)
    faces = []
    for ax in range(grid.ndim):
        if grid.periodic[ax]:
            continue
        tol = 1e-9 * (grid.hi[ax] - grid.lo[ax])
        if abs(x0[ax] - grid.lo[ax]) < tol:
            faces.append((ax, 1.0))
        elif abs(x0[ax] - grid.hi[ax]) < tol:
            faces.append((ax, -1.0))
    if axis is not None:
        faces = [f for f in faces if f[0] == axis]
    if not faces:
        raise ValueError(f"{tuple(x0)} is not on a box face")
    ax, sign = faces[0]
    lin = _chart_linear(g, x0)
    normal = np.zeros(g.n)
    normal[ax] = sign
    # a^T L = normal^T
    a = np.linalg.solve(lin.T, normal)
    return tuple(a / np.linalg.norm(a))


def plane_values(g: GroupModel, grid: Grid, x0, a) -> np.ndarray:
    y = g.chart(x0, grid.points)
    return np.tensordot(np.asarray(a, dtype=float), y, axes=1)


def neighborhood_mask(g: GroupModel, grid: Grid, x0, rho: float) -> np.ndarray:
    """Nodes whose chart coordinates around ``x0`` have Euclidean norm below ``rho``."""
    y = g.chart(x0, grid.points)
    if g.periodic_axes:
        for ax, period in g.periodic_axes.items():
            y[ax] = (y[ax] + 0.5 * period) % period - 0.5 * period
    return np.sqrt(np.sum(y * y, axis=0)) < rho


def build_barrier(spec: BarrierSpec, g: GroupModel, eps: float, grid: Grid) -> ScalarField:
    """Sample ``psi(Pi)`` on the grid (zero outside the log domain is not allowed)."""
    check_eps(eps)
    pi = plane_values(g, grid, spec.x0, spec.a)
    mask = neighborhood_mask(g, grid, spec.x0, spec.rho)
    if np.any(1.0 + spec.k * pi[mask] <= 0):
        raise ValueError("Pi < -1/k inside the neighbourhood; shrink rho")
    # outside the neighbourhood the barrier is only sampled where it is defined
    safe = np.where(1.0 + spec.k * pi > 0, pi, 0.0)
    return ScalarField(grid, psi(safe, spec.k, spec.nu))


def datum_c2_norm(g: GroupModel, grid: Grid, phi) -> float:
    """``sup|phi| + sup|grad_1 phi| + max_ij sup|X_i X_j phi|`` in the unscaled frame."""
    values = sample_datum(phi, grid, "phi")
    ops = frame_operators(g, 1.0, grid)
    grad = ops.full_grad(values)
    second = max(float(np.max(np.abs(ops.XX(i, j, values)))) for i in range(g.n) for j in range(g.n))
    return float(np.max(np.abs(values)) + np.max(np.sqrt(np.sum(grad * grad, axis=0))) + second)


def default_parameters(g: GroupModel, eps: float, grid: Grid, phi) -> tuple:
    """``k = 4 (1 + N)``, ``nu = 1 / (2 (1 + N)^2 eps^2)`` with ``N`` the C^2 norm of phi."""
    eps = check_eps(eps, allow_zero=False)
    norm = datum_c2_norm(g, grid, phi)
    return 4.0 * (1.0 + norm), 1.0 / (2.0 * (1.0 + norm) ** 2 * eps ** 2)


@dataclass
class Certificate:
    spec: BarrierSpec
    eps: float
    max_q: float
    min_f: float
    boundary_violation: float
    nodes: int
    details: dict = field(default_factory=dict)

    @property
    def measured_c(self) -> float:
        """``min F / eps^2`` over the neighbourhood (the constant in ``-C eps^2``)."""
        return self.min_f / self.eps ** 2 if self.eps > 0 else math.nan

    @property
    def required(self) -> float:
        """The threshold ``-C eps^2 / 2`` that ``max Q`` must not exceed."""
        return -0.5 * self.min_f

    @property
    def margin(self) -> float:
        """``max Q - required``; non-positive when the inequality holds."""
        return self.max_q - self.required

    @property
    def passed(self) -> bool:
        return self.nodes > 0 and self.min_f > 0 and self.margin <= 0 and self.boundary_violation <= 1e-12

    def row(self) -> tuple:
        point = " ".join(f"{v:.17g}" for v in self.spec.x0)
        return (point, self.eps, self.spec.k, self.spec.nu, self.spec.rho, self.max_q, self.margin, int(self.passed))


def _as_list(v):
    if v is None:
        return []
    if isinstance(v, np.ndarray):
        return [v]
    if isinstance(v, ScalarField):
        return [v.values]
    return [getattr(f, "values", getattr(f, "u", f)) for f in v]


def certify_subsolution(w, v, phi, g: GroupModel, eps: float, neighborhood: np.ndarray,
                        spec: BarrierSpec, grid: Grid | None = None, side: str = "upper") -> Certificate:
    """Evaluate ``Q(w)`` on the interior nodes of ``neighborhood``.

    ``v`` is one field or a sequence of fields of ``u - phi`` (for instance the
    snapshots of a run); ``w >= v`` is checked on the parabolic boundary of the
    neighbourhood, that is on its rim inside the box. The barrier is
    time-independent, so ``d/dt w = 0``.

    ``side="lower"`` certifies ``-w`` as a lower barrier. The operator is odd, so
    this is the upper certificate for ``-phi`` and ``-v``.
    """
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    sign = 1.0 if side == "upper" else -1.0
    eps = check_eps(eps)
    grid = grid or getattr(w, "grid", None)
    if grid is None:
        raise ValueError("grid is required when w is a plain array")
    wv = np.asarray(getattr(w, "values", w), dtype=float)
    phiv = sign * sample_datum(phi, grid, "phi")
    nb = np.asarray(neighborhood, dtype=bool)
    if nb.shape != grid.shape or wv.shape != grid.shape:
        raise ValueError("w, phi and the neighbourhood must live on the same grid")
    inner = nb & grid.interior(1)
    if not inner.any():
        raise ValueError("neighbourhood has no interior node; it exits the grid or rho is too small")
    ops = frame_operators(g, eps, grid)
    q = ops.mean_curvature(wv + phiv)
    # F = nu psi'^2 a_ij X_i Pi X_j Pi with a evaluated at grad(w + phi)
    pi = plane_values(g, grid, spec.x0, spec.a)
    xi = ops.grad(wv + phiv)
    dpi = ops.grad(pi)
    w2 = 1.0 + np.sum(xi * xi, axis=0)
    quad = np.sum(dpi * dpi, axis=0) - np.sum(xi * dpi, axis=0) ** 2 / w2
    f = spec.nu * psi_prime(np.maximum(pi, 0.0), spec.k, spec.nu) ** 2 * quad
    # rim: neighbourhood nodes with a neighbour outside it (lateral part of the parabolic boundary)
    outside = ~nb
    rim = np.zeros_like(nb)
    for ax in range(grid.ndim):
        for shift in (1, -1):
            rolled = np.roll(outside, shift, axis=ax)
            if not grid.periodic[ax]:
                idx = [slice(None)] * grid.ndim
                idx[ax] = 0 if shift == 1 else -1
                rolled[tuple(idx)] = False
            rim |= nb & rolled
    viol = 0.0
    for field_ in _as_list(v):
        vv = sign * np.asarray(field_, dtype=float)
        if vv.shape != grid.shape:
            raise ValueError("v does not match the grid")
        if rim.any():
            viol = max(viol, float(np.max(vv[rim] - wv[rim])))
        on_face = nb & grid.boundary
        if on_face.any():
            viol = max(viol, float(np.max(vv[on_face] - wv[on_face])))
    return Certificate(
        spec=spec, eps=eps, max_q=float(q[inner].max()), min_f=float(f[inner].min()),
        boundary_violation=max(viol, 0.0), nodes=int(inner.sum()),
        details={"psi_prime_term": float(np.max(np.abs(_psi_prime_term(ops, pi)[inner]))),
                 "rim_nodes": int(rim.sum()), "side": side},
    )


def _psi_prime_term(ops, pi):
    """Symmetric part of ``X_i X_j Pi``: the term the antisymmetry removes."""
    act = ops.active
    worst = np.zeros(ops.grid.shape)
    for a_, i in enumerate(act):
        for j in act[a_:]:
            sym = 0.5 * (ops.XX(i, j, pi) + ops.XX(j, i, pi))
            worst = np.maximum(worst, np.abs(sym))
    return worst


def certify_point(g: GroupModel, eps: float, grid: Grid, phi, x0, v=None, k=None, nu=None,
                  rho=None, a=None, radii=None, side: str = "both") -> Certificate:
    """Certificate at one boundary point with default parameters.

    Without ``rho`` the neighbourhood radius is calibrated: the largest radius
    from ``radii`` (default a decreasing sweep of box-width fractions) whose
    certificate passes. The last attempt is returned when none passes.
    ``side="both"`` certifies the upper and the lower barrier and reports the
    worse of the two.
    """
    eps = check_eps(eps, allow_zero=False)
    dk, dnu = default_parameters(g, eps, grid, phi)
    k = dk if k is None else k
    nu = dnu if nu is None else nu
    a = face_plane(g, grid, x0) if a is None else a
    width = min(h - l for h, l, p in zip(grid.hi, grid.lo, grid.periodic) if not p)
    if rho is not None:
        radii = [rho]
    elif radii is None:
        radii = [width * f for f in (0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1)]
    cert = None
    for r in sorted(radii, reverse=True):
        spec = BarrierSpec(tuple(x0), tuple(a), k, nu, r)
        try:
            w = build_barrier(spec, g, eps, grid)
        except ValueError:
            continue
        nb = neighborhood_mask(g, grid, x0, r)
        if not (nb & grid.interior(1)).any():
            continue
        sides = ("upper", "lower") if side == "both" else (side,)
        certs = [certify_subsolution(w, v, phi, g, eps, nb, spec, grid, s) for s in sides]
        cert = max(certs, key=lambda c: (not c.passed, c.margin))
        if cert.passed:
            return cert
    if cert is None:
        raise ValueError("no admissible neighbourhood radius")
    return cert


@dataclass
class GradientCheck:
    ratio: float
    bound: float
    where: tuple

    @property
    def passed(self) -> bool:
        return self.ratio <= self.bound


def boundary_gradient_check(u, phi, spec: BarrierSpec, g: GroupModel, grid: Grid,
                            stencil: int = 3) -> GradientCheck:
    """``max |u - phi|(x) / dist_1(x, x0)`` over the neighbourhood, against ``k / nu``.

    ``u`` is a field or a sequence of fields (all times of a run).
    """
    phiv = sample_datum(phi, grid, "phi")
    dist = distance_map(g, 1.0, grid, spec.x0, stencil).values
    nb = neighborhood_mask(g, grid, spec.x0, spec.rho) & (dist > 0)
    best, where = 0.0, tuple(spec.x0)
    for field_ in _as_list(u):
        vv = np.abs(np.asarray(field_, dtype=float) - phiv)
        ratio = np.where(nb, vv / np.where(dist > 0, dist, 1.0), -np.inf)
        j = np.unravel_index(int(np.argmax(ratio)), grid.shape)
        if ratio[j] > best:
            best = float(ratio[j])
            where = tuple(float(grid.axes[ax][j[ax]]) for ax in range(grid.ndim))
    return GradientCheck(best, spec.gradient_bound, where)
