"""Experiment configuration: strict TOML schema and the datum catalog.

Datum expressions are restricted to a small catalog: numeric constants, the
coordinates ``x1 .. xn``, ``pi``, ``+ - *``, division by constants,
non-negative integer powers and ``sin`` / ``cos`` / ``exp`` of catalog
expressions. They are parsed with :mod:`ast` and evaluated by walking the tree;
nothing is passed to ``eval``.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .group import GroupModel, parse_group

__all__ = ["ConfigError", "ExperimentConfig", "Datum", "parse_config", "load_config", "parse_datum"]


class ConfigError(ValueError):
    """Raised with every problem found, not only the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul}


@dataclass(frozen=True)
class Datum:
    """A parsed catalog expression, callable on ``(n, *shape)`` point arrays."""

    text: str
    tree: ast.AST = field(repr=False, compare=False)
    max_index: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(_eval(self.tree, x), dtype=float), x.shape[1:]).copy()

    @property
    def is_linear(self) -> bool:
        return _degree(self.tree) <= 1


def _eval(node, x):
    if isinstance(node, ast.Expression):
        return _eval(node.body, x)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return math.pi
        return x[int(node.id[1:]) - 1]
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, x)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        left, right = _eval(node.left, x), _eval(node.right, x)
        if isinstance(node.op, ast.Div):
            return left / right
        if isinstance(node.op, ast.Pow):
            return left ** int(right)
        return _BINOPS[type(node.op)](left, right)
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](_eval(node.args[0], x))
    raise TypeError(type(node).__name__)


def _degree(node) -> float:
    """Polynomial degree, ``inf`` for transcendental pieces."""
    if isinstance(node, ast.Expression):
        return _degree(node.body)
    if isinstance(node, ast.Constant) or (isinstance(node, ast.Name) and node.id == "pi"):
        return 0
    if isinstance(node, ast.Name):
        return 1
    if isinstance(node, ast.UnaryOp):
        return _degree(node.operand)
    if isinstance(node, ast.BinOp):
        a, b = _degree(node.left), _degree(node.right)
        if isinstance(node.op, (ast.Add, ast.Sub)):
            return max(a, b)
        if isinstance(node.op, ast.Mult):
            return a + b
        if isinstance(node.op, ast.Div):
            return a
        if isinstance(node.op, ast.Pow):
            return a * int(_eval(node.right, np.zeros((1, 1))))
    if isinstance(node, ast.Call):
        return 0 if _degree(node.args[0]) == 0 else math.inf
    return math.inf


def _check_tree(node, errors, where, indices):
    if isinstance(node, ast.Expression):
        _check_tree(node.body, errors, where, indices)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            errors.append(f"{where}: only numeric constants are allowed, got {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id == "pi":
            return
        if len(node.id) > 1 and node.id[0] == "x" and node.id[1:].isdigit() and int(node.id[1:]) >= 1:
            indices.append(int(node.id[1:]))
        else:
            errors.append(f"{where}: unknown name {node.id!r} (use x1..xn or pi)")
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            errors.append(f"{where}: operator {type(node.op).__name__} is not in the catalog")
        _check_tree(node.operand, errors, where, indices)
    elif isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Div):
            if _names(node.right):
                errors.append(f"{where}: division is only allowed by constants")
        elif isinstance(node.op, ast.Pow):
            if _names(node.right):
                errors.append(f"{where}: exponents must be constant integers")
            else:
                try:
                    e = _eval(node.right, np.zeros((1, 1)))
                except Exception:
                    e = -1
                if not (float(e).is_integer() and 0 <= e <= 8):
                    errors.append(f"{where}: exponent must be an integer in 0..8")
        elif type(node.op) not in _BINOPS:
            errors.append(f"{where}: operator {type(node.op).__name__} is not in the catalog")
        _check_tree(node.left, errors, where, indices)
        _check_tree(node.right, errors, where, indices)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            errors.append(f"{where}: only {sorted(_FUNCS)} may be called")
        elif len(node.args) != 1 or node.keywords:
            errors.append(f"{where}: {node.func.id} takes exactly one argument")
        for arg in node.args:
            _check_tree(arg, errors, where, indices)
    else:
        errors.append(f"{where}: construct {type(node).__name__} is not in the catalog")


def _names(node) -> bool:
    return any(isinstance(n, ast.Name) and n.id != "pi" for n in ast.walk(node))


def parse_datum(text: str, n: int | None = None, where: str = "datum") -> Datum:
    """Parse a catalog expression; ``n`` enforces the coordinate range."""
    errors = []
    datum = _parse_datum(text, n, where, errors)
    if errors:
        raise ConfigError(errors)
    return datum


def _parse_datum(text, n, where, errors):
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        errors.append(f"{where}: expected an expression string or a number")
        return None
    text = str(text)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        errors.append(f"{where}: cannot parse {text!r} ({exc.msg})")
        return None
    before = len(errors)
    indices: list = []
    _check_tree(tree, errors, where, indices)
    top = max(indices, default=0)
    if n is not None and top > n:
        errors.append(f"{where}: expression {text!r} uses x{top} but the group has dimension {n}")
    if len(errors) > before:
        return None
    return Datum(text, tree, top)


_TOP = {"group", "seed", "grid", "flow", "datum", "diagnostics", "output"}
_GRID = {"lo", "hi", "shape"}
_FLOW = {"eps", "include_zero", "T", "steady", "steady_tol", "cfl_safety", "scheme", "max_steps",
         "snapshot_times", "record_every"}
_DATUM = {"phi", "u0", "u0_file"}
_DIAG = {"max_principle", "gradient_bound", "gradient_uniformity", "eps_limit", "minimal_surface",
         "right_derivative", "divergence", "bernstein", "bernstein_delta", "residual_tol",
         "barrier_points", "doubling_radii", "doubling_samples", "doubling_stencil",
         "holder_alpha", "holder_pairs"}
_OUTPUT = {"dir", "snapshots"}


@dataclass
class ExperimentConfig:
    group: str
    model: GroupModel
    lo: tuple
    hi: tuple
    shape: tuple
    eps: list
    phi: Datum
    include_zero: bool = False
    T: float = math.inf
    steady: bool = False
    steady_tol: float = 1e-7
    cfl_safety: float = 0.5
    scheme: str = "centered"
    max_steps: int = 1_000_000
    record_every: int = 1
    snapshot_times: tuple = ()
    u0: Datum | None = None
    u0_file: str | None = None
    seed: int = 0
    diagnostics: dict = field(default_factory=dict)
    out_dir: str = "mcf_out"
    write_snapshots: bool = True
    source: str = ""


DIAG_DEFAULTS = {
    "max_principle": True,
    "gradient_bound": True,
    "gradient_uniformity": 0.2,
    "eps_limit": True,
    "minimal_surface": True,
    "right_derivative": [],
    "divergence": False,
    "bernstein": False,
    "bernstein_delta": 0.1,
    "residual_tol": None,
    "barrier_points": [],
    "doubling_radii": [],
    "doubling_samples": [],
    "doubling_stencil": 3,
    "holder_alpha": [],
    "holder_pairs": 20_000,
}


def _unknown(table: dict, allowed: set, where: str, errors: list):
    for key in sorted(set(table) - allowed):
        errors.append(f"{where}: unknown key {key!r}")


def _num(v, key, errors, positive=False, allow_inf=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{key}: expected a number, got {v!r}")
        return None
    v = float(v)
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        errors.append(f"{key}: must be finite")
        return None
    if positive and not v > 0:
        errors.append(f"{key}: must be positive")
        return None
    return v


def _vector(v, n, key, errors, kind=float):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (kind(v),) * n
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        errors.append(f"{key}: expected a number or a list of numbers")
        return None
    if len(v) != n:
        errors.append(f"{key}: expected {n} entries for a group of dimension {n}, got {len(v)}")
        return None
    if kind is int and any(float(x) != int(x) for x in v):
        errors.append(f"{key}: entries must be integers")
        return None
    return tuple(kind(x) for x in v)


def _bool(v, key, errors):
    if not isinstance(v, bool):
        errors.append(f"{key}: expected true or false")
        return None
    return v


def parse_config(text: str, steady: bool = False) -> ExperimentConfig:
    """Validate a TOML experiment description; raises :class:`ConfigError` listing every problem.

    ``steady=True`` (the command-line override) waives the requirement for ``flow.T``.
    """
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax: {exc}"]) from None
    errors: list = []
    _unknown(raw, _TOP, "top level", errors)
    for name, allowed in (("grid", _GRID), ("flow", _FLOW), ("datum", _DATUM),
                          ("diagnostics", _DIAG), ("output", _OUTPUT)):
        if name in raw and not isinstance(raw[name], dict):
            errors.append(f"{name}: expected a table")
            raw[name] = {}
        _unknown(raw.get(name, {}), allowed, name, errors)

    model = None
    group = raw.get("group")
    if group is None:
        errors.append("group: required")
    elif not isinstance(group, str):
        errors.append("group: expected a string such as \"heisenberg\" or \"free:2\"")
    else:
        try:
            model = parse_group(group)
        except ValueError as exc:
            errors.append(f"group: {exc}")
    n = model.n if model is not None else None

    grid = raw.get("grid", {})
    lo = hi = shape = None
    if n is not None:
        lo = _vector(grid.get("lo", 0.0), n, "grid.lo", errors)
        hi = _vector(grid.get("hi", 1.0), n, "grid.hi", errors)
        shape = _vector(grid.get("shape", 21), n, "grid.shape", errors, int)
        if lo and hi and any(b <= a for a, b in zip(lo, hi)):
            errors.append("grid.hi: every entry must exceed grid.lo")
        if shape and any(s < 5 for s in shape):
            errors.append("grid.shape: need at least 5 points per axis")

    flow = raw.get("flow", {})
    eps = flow.get("eps", [1.0])
    if isinstance(eps, (int, float)) and not isinstance(eps, bool):
        eps = [eps]
    eps_ok = []
    if not isinstance(eps, list) or not eps:
        errors.append("flow.eps: expected a non-empty list of numbers")
    else:
        for e in eps:
            v = _num(e, "flow.eps", errors)
            if v is not None:
                if not 0 <= v <= 1:
                    errors.append(f"flow.eps: value {v} outside [0, 1]")
                eps_ok.append(v)
        if len(eps_ok) == len(eps):
            if any(b >= a for a, b in zip(eps_ok, eps_ok[1:])):
                errors.append(f"flow.eps: must be sorted strictly descending, got {eps_ok}")
    opts = {}
    if "include_zero" in flow:
        opts["include_zero"] = _bool(flow["include_zero"], "flow.include_zero", errors)
    if "steady" in flow:
        opts["steady"] = _bool(flow["steady"], "flow.steady", errors)
    if "T" in flow:
        opts["T"] = _num(flow["T"], "flow.T", errors, positive=True, allow_inf=True)
    if "steady_tol" in flow:
        v = _num(flow["steady_tol"], "flow.steady_tol", errors)
        if v is not None and v < 0:
            errors.append("flow.steady_tol: must be non-negative")
        opts["steady_tol"] = v
    if "cfl_safety" in flow:
        v = _num(flow["cfl_safety"], "flow.cfl_safety", errors)
        if v is not None and not 0 < v <= 1:
            errors.append("flow.cfl_safety: must lie in (0, 1]")
        opts["cfl_safety"] = v
    if "scheme" in flow:
        if flow["scheme"] not in ("centered", "monotone", "auto"):
            errors.append("flow.scheme: expected \"centered\", \"monotone\" or \"auto\"")
        opts["scheme"] = flow["scheme"]
    for key in ("max_steps", "record_every"):
        if key in flow:
            v = flow[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                errors.append(f"flow.{key}: expected a positive integer")
            opts[key] = v
    if "snapshot_times" in flow:
        st = flow["snapshot_times"]
        if not isinstance(st, list) or any(_num(t, "flow.snapshot_times", errors, positive=True) is None for t in st):
            errors.append("flow.snapshot_times: expected a list of positive times")
        else:
            opts["snapshot_times"] = tuple(sorted(float(t) for t in st))
    if not (steady or opts.get("steady")) and "T" not in flow:
        errors.append("flow.T: required unless flow.steady = true")

    datum = raw.get("datum", {})
    phi = None
    if "phi" not in datum:
        errors.append("datum.phi: required")
    else:
        phi = _parse_datum(datum["phi"], n, "datum.phi", errors)
    u0 = None
    if "u0" in datum:
        u0 = _parse_datum(datum["u0"], n, "datum.u0", errors)
    if "u0" in datum and "u0_file" in datum:
        errors.append("datum: give u0 or u0_file, not both")
    if "u0_file" in datum and not isinstance(datum["u0_file"], str):
        errors.append("datum.u0_file: expected a path string")

    diag = dict(DIAG_DEFAULTS)
    for key, v in raw.get("diagnostics", {}).items():
        if key not in _DIAG:
            continue
        where = f"diagnostics.{key}"
        default = DIAG_DEFAULTS[key]
        if isinstance(default, bool):
            v = _bool(v, where, errors)
        elif key in ("gradient_uniformity", "bernstein_delta"):
            v = _num(v, where, errors, positive=True)
        elif key == "residual_tol":
            v = _num(v, where, errors, positive=True)
        elif key in ("holder_pairs", "doubling_stencil"):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                errors.append(f"{where}: expected a positive integer")
            elif key == "doubling_stencil" and v not in (3, 5):
                errors.append(f"{where}: must be 3 or 5")
        elif key == "right_derivative":
            if not isinstance(v, list) or any(isinstance(k, bool) or not isinstance(k, int) for k in v):
                errors.append(f"{where}: expected a list of integer indices")
            elif n is not None and any(not 0 <= k <= n for k in v):
                errors.append(f"{where}: indices must lie in 0..{n}")
        elif key in ("doubling_radii", "holder_alpha"):
            if not isinstance(v, list) or any(_num(r, where, errors, positive=True) is None for r in v):
                errors.append(f"{where}: expected a list of positive numbers")
            elif key == "holder_alpha" and any(a > 1 for a in v):
                errors.append(f"{where}: exponents must lie in (0, 1]")
        elif key in ("barrier_points", "doubling_samples"):
            if not isinstance(v, list):
                errors.append(f"{where}: expected a list of points")
            elif n is not None:
                for p in v:
                    if isinstance(p, list):
                        _vector(p, n, where, errors)
                    else:
                        errors.append(f"{where}: points must be lists")
        diag[key] = v

    output = raw.get("output", {})
    out_dir = output.get("dir", "mcf_out")
    if not isinstance(out_dir, str):
        errors.append("output.dir: expected a path string")
    snaps = output.get("snapshots", True)
    if not isinstance(snaps, bool):
        errors.append("output.snapshots: expected true or false")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append("seed: expected a non-negative integer")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        group=group, model=model, lo=lo, hi=hi, shape=shape, eps=eps_ok, phi=phi, u0=u0,
        u0_file=datum.get("u0_file"), seed=seed, diagnostics=diag, out_dir=out_dir,
        write_snapshots=snaps, source=text, **opts,
    )


def load_config(path, steady: bool = False) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError([f"{path}: not valid UTF-8"]) from None
    return parse_config(text, steady)
