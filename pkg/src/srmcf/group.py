"""Step-2 Lie group models presented through coordinate frames.

Every model stores its left- and right-invariant frames as sympy expressions in
the coordinates ``x1, ..., xn`` and compiles them to vectorised numpy callables.
Points are arrays whose *first* axis indexes coordinates, so a grid of points is
an ``(n, *shape)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import sympy as sp

__all__ = [
    "GroupModel",
    "EpsilonFrame",
    "make_model",
    "parse_group",
    "frame_matrix",
    "metric_tensor",
    "left_right_change",
    "commutator",
]


def _compile(exprs, symbols):
    fn = sp.lambdify(symbols, list(exprs), modules="numpy")

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        vals = fn(*x)
        shape = x.shape[1:]
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals])

    return evaluate


@dataclass(frozen=True, eq=False)
class GroupModel:
    """A step-2 group in exponential-type coordinates.

    ``left[i]`` and ``right[i]`` are the coordinate coefficient vectors (sympy)
    of the left-invariant field ``X_{i+1}`` and the right-invariant field
    ``X_{i+1}^r``. Indices are zero-based throughout the code.
    """

    name: str
    n: int
    m: int
    symbols: tuple
    left: tuple
    right: tuple
    law: Callable[[np.ndarray, np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    periodic_axes: dict = field(default_factory=dict)
    carnot: bool = True
    structure_note: str = ""

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if len(self.left) != self.n or len(self.right) != self.n:
            raise ValueError("frames must have n vectors")

    def __repr__(self):
        return f"GroupModel({self.name!r}, n={self.n}, m={self.m})"

    @property
    def degree(self) -> tuple:
        return tuple(1 if i < self.m else 2 for i in range(self.n))

    @cached_property
    def _left_fns(self):
        return [_compile(v, self.symbols) for v in self.left]

    @cached_property
    def _right_fns(self):
        return [_compile(v, self.symbols) for v in self.right]

    @cached_property
    def _left_jac_fns(self):
        # d c_i / d x_k for every frame vector i, as (n, n) blocks
        out = []
        for vec in self.left:
            jac = [sp.diff(c, s) for c in vec for s in self.symbols]
            out.append(_compile(jac, self.symbols))
        return out

    def left_coeffs(self, i: int, x) -> np.ndarray:
        """Coefficients of X_i at points ``x`` (shape ``(n, *shape)``)."""
        return self._left_fns[i](x)

    def right_coeffs(self, i: int, x) -> np.ndarray:
        return self._right_fns[i](x)

    def left_jacobian(self, i: int, x) -> np.ndarray:
        """``J[l, k] = d(c_i)_l / d x_k`` at ``x``; shape ``(n, n, *shape)``."""
        x = np.asarray(x, dtype=float)
        return self._left_jac_fns[i](x).reshape((self.n, self.n) + x.shape[1:])

    def chart(self, base, x) -> np.ndarray:
        """Coordinates of ``base^{-1} x``: a chart centred at ``base``."""
        base = np.asarray(base, dtype=float).reshape((self.n,) + (1,) * (np.ndim(x) - 1))
        x = np.asarray(x, dtype=float)
        return self.law(np.broadcast_to(self.inverse(base), x.shape), x)

    def wrap(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        for ax, period in self.periodic_axes.items():
            x[ax] = np.mod(x[ax], period)
        return x


def commutator(g: GroupModel, a: Sequence, b: Sequence) -> tuple:
    """Symbolic coordinate coefficients of ``[A, B] = A(c_B) - B(c_A)``."""
    xs = g.symbols
    out = []
    for l in range(g.n):
        term = sum(a[k] * sp.diff(b[l], xs[k]) - b[k] * sp.diff(a[l], xs[k]) for k in range(g.n))
        out.append(sp.simplify(term))
    return tuple(out)


def _heisenberg():
    x1, x2, x3 = xs = sp.symbols("x1 x2 x3", real=True)
    left = ((1, 0, -x2), (0, 1, x1), (0, 0, 1))
    right = ((1, 0, x2), (0, 1, -x1), (0, 0, 1))

    def law(x, y):
        return np.stack([x[0] + y[0], x[1] + y[1], x[2] + y[2] - (x[1] * y[0] - x[0] * y[1])])

    return GroupModel(
        name="heisenberg", n=3, m=2, symbols=xs,
        left=_sym(left), right=_sym(right),
        law=law, inverse=lambda x: -np.asarray(x, dtype=float),
        structure_note="[X1, X2] = 2 X3 with X3 = d/dx3",
    )


def _rototranslation():
    x1, x2, th = xs = sp.symbols("x1 x2 x3", real=True)
    c, s = sp.cos(th), sp.sin(th)
    X1 = (c, s, 0)
    X2 = (0, 0, 1)
    # completion by the computed bracket [X1, X2] = sin(th) d1 - cos(th) d2
    X3 = (s, -c, 0)
    right = ((1, 0, 0), (-x2, x1, 1), (0, -1, 0))

    def law(x, y):
        ct, st = np.cos(x[2]), np.sin(x[2])
        return np.stack([x[0] + y[0] * ct - y[1] * st, x[1] + y[0] * st + y[1] * ct, x[2] + y[2]])

    def inverse(x):
        x = np.asarray(x, dtype=float)
        ct, st = np.cos(x[2]), np.sin(x[2])
        return np.stack([-x[0] * ct - x[1] * st, x[0] * st - x[1] * ct, -x[2]])

    return GroupModel(
        name="rototranslation", n=3, m=2, symbols=xs,
        left=_sym((X1, X2, X3)), right=_sym(right),
        law=law, inverse=inverse,
        periodic_axes={2: 2 * np.pi}, carnot=False,
        structure_note="[X1, X2] = X3 = sin(th) d1 - cos(th) d2 (opposite sign to the "
                       "-sin d1 + cos d2 convention; only the span is used)",
    )


def _free_step2(m: int):
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    n = m + len(pairs)
    xs = sp.symbols(" ".join(f"x{k + 1}" for k in range(n)), real=True, seq=True)
    half = sp.Rational(1, 2)

    def first_layer(k, sign):
        vec = [0] * n
        vec[k] = 1
        for p, (i, j) in enumerate(pairs):
            # [x, e_k]_(ij) = x_i delta_jk - x_j delta_ik
            coef = (xs[i] if j == k else 0) - (xs[j] if i == k else 0)
            vec[m + p] = sign * half * coef
        return tuple(vec)

    unit = [tuple(1 if q == m + p else 0 for q in range(n)) for p in range(len(pairs))]
    left = [first_layer(k, +1) for k in range(m)] + unit
    right = [first_layer(k, -1) for k in range(m)] + unit

    def bracket(x, y):
        return np.stack([x[i] * y[j] - x[j] * y[i] for i, j in pairs])

    def law(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = x + y
        out[m:] = out[m:] + 0.5 * bracket(x[:m], y[:m])
        return out

    return GroupModel(
        name=f"free:{m}", n=n, m=m, symbols=xs,
        left=_sym(left), right=_sym(right),
        law=law, inverse=lambda x: -np.asarray(x, dtype=float),
        structure_note="[X_i, X_j] = X_(ij) for i < j, exponential coordinates of the first kind",
    )


def _abelian(n: int):
    xs = sp.symbols(" ".join(f"x{k + 1}" for k in range(n)), real=True, seq=True)
    eye = [tuple(1 if q == k else 0 for q in range(n)) for k in range(n)]
    return GroupModel(
        name=f"abelian:{n}", n=n, m=n, symbols=xs,
        left=_sym(eye), right=_sym(eye),
        law=lambda x, y: np.asarray(x, dtype=float) + np.asarray(y, dtype=float),
        inverse=lambda x: -np.asarray(x, dtype=float),
    )


def _sym(vectors):
    return tuple(tuple(sp.sympify(c) for c in v) for v in vectors)


def make_model(name: str, param: int | None = None) -> GroupModel:
    """Build one of the supported models.

    ``name`` is ``"heisenberg"``, ``"rototranslation"``, ``"free_step2"`` (with
    ``param = m``) or ``"abelian"`` (with ``param = n``).
    """
    key = name.lower().replace("-", "_")
    if key == "heisenberg":
        return _heisenberg()
    if key in ("rototranslation", "rt"):
        return _rototranslation()
    if key in ("free_step2", "free"):
        if param is None or int(param) < 2:
            raise ValueError("free_step2 needs m >= 2 generators")
        return _free_step2(int(param))
    if key == "abelian":
        if param is None or int(param) < 1:
            raise ValueError("abelian needs n >= 1")
        return _abelian(int(param))
    raise ValueError(f"unknown group model {name!r}")


def parse_group(spec: str) -> GroupModel:
    """Parse ``"heisenberg" | "rototranslation" | "free:<m>" | "abelian:<n>"``."""
    head, _, tail = spec.strip().partition(":")
    if tail:
        try:
            param = int(tail)
        except ValueError:
            raise ValueError(f"bad group parameter in {spec!r}") from None
        if head == "free":
            return make_model("free_step2", param)
        return make_model(head, param)
    return make_model(head)


@dataclass(frozen=True)
class EpsilonFrame:
    """The scaled frame ``{X_1..X_m, eps X_{m+1}..eps X_n}``."""

    base: GroupModel
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def active(self) -> range:
        """Indices of frame vectors that take part in gradients."""
        return range(self.base.n if self.epsilon > 0 else self.base.m)

    def scale(self, i: int) -> float:
        return 1.0 if i < self.base.m else self.epsilon

    def coeffs(self, i: int, x) -> np.ndarray:
        return self.scale(i) * self.base.left_coeffs(i, x)


def frame_matrix(g: GroupModel, eps: float, x) -> np.ndarray:
    """n x n matrix whose column i holds the coefficients of X_i^eps at ``x``."""
    x = np.asarray(x, dtype=float).reshape(g.n)
    frame = EpsilonFrame(g, eps)
    return np.stack([frame.coeffs(i, x) for i in range(g.n)], axis=1)


def metric_tensor(g: GroupModel, eps: float, x) -> np.ndarray:
    """``G = (A A^T)^{-1}`` so that the eps-frame is G-orthonormal."""
    if eps <= 0:
        raise ValueError("metric tensor needs eps > 0")
    a = frame_matrix(g, eps, x)
    aat = a @ a.T
    if np.linalg.cond(aat) > 1e14:
        raise np.linalg.LinAlgError("frame matrix is singular at this point")
    g_mat = np.linalg.inv(aat)
    return 0.5 * (g_mat + g_mat.T)


def left_right_change(g: GroupModel, x) -> np.ndarray:
    """Matrix ``C`` with ``X_k = sum_j C[k, j] X_j^r`` at the point ``x``."""
    x = np.asarray(x, dtype=float).reshape(g.n)
    a_left = np.stack([g.left_coeffs(i, x) for i in range(g.n)], axis=1)
    a_right = np.stack([g.right_coeffs(i, x) for i in range(g.n)], axis=1)
    if abs(np.linalg.det(a_right)) < 1e-14:
        raise np.linalg.LinAlgError("right frame is singular at this point")
    # a_left[:, k] = sum_j C[k, j] a_right[:, j]  <=>  a_left = a_right @ C.T
    return np.linalg.solve(a_right, a_left).T
