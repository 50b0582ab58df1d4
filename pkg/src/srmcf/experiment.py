"""Run a parsed experiment: flows per eps, diagnostics, tables and a JSON summary.

Each eps is an independent task. Workers receive the configuration text (not
live objects) and return plain data, so the sweep can run in a process pool.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .barrier import CERTIFICATE_COLUMNS, boundary_gradient_check, certify_point
from .config import ExperimentConfig, parse_config
from .diagnostics import (
    DiagnosticsReport,
    bernstein_fields,
    divergence_consistency,
    eps_limit_study,
    gradient_bound_series,
    minimal_surface_residual,
    residual_from_state,
)
from .flow import FlowProblem, run
from .grid import Grid
from .io import format_float, read_snapshot, write_csv, write_json, write_snapshot
from .metric import doubling_ratio, holder_seminorm, metric_graph

log = logging.getLogger(__name__)

__all__ = ["run_experiment", "ExperimentResult", "build_problem", "eps_tag"]


def eps_tag(eps: float) -> str:
    return format_float(eps).replace(".", "p")


def _grid(cfg: ExperimentConfig) -> Grid:
    return Grid.for_group(cfg.model, cfg.lo, cfg.hi, cfg.shape)


def build_problem(cfg: ExperimentConfig, eps: float, steady: bool | None = None) -> FlowProblem:
    steady = cfg.steady if steady is None else steady
    grid = _grid(cfg)
    u0 = cfg.u0
    if cfg.u0_file:
        snap = read_snapshot(cfg.u0_file)
        if snap.grid.shape != grid.shape:
            raise ValueError(f"{cfg.u0_file}: grid {snap.grid.shape} does not match {grid.shape}")
        u0 = snap.values
    scheme = cfg.scheme
    if scheme == "monotone" and eps == 0:
        scheme = "centered"
    return FlowProblem(
        group=cfg.model, eps=eps, grid=grid, phi=cfg.phi,
        T=math.inf if steady else cfg.T,
        cfl_safety=cfg.cfl_safety, steady_tol=cfg.steady_tol,
        u0=u0, scheme=scheme, max_steps=cfg.max_steps, record_every=cfg.record_every,
        snapshot_times=cfg.snapshot_times,
    )


def _eps_task(args):
    """Everything that depends on one eps; returns plain data."""
    text, eps, steady, out_dir = args
    cfg = parse_config(text, steady=steady)
    diag = cfg.diagnostics
    p = build_problem(cfg, eps, steady)
    result = run(p)
    out = {"eps": eps, "steady": result.steady, "capped": result.capped, "steps": result.state.step,
           "t": result.state.t, "u": result.u, "files": []}
    report = DiagnosticsReport.from_run(result)
    extra = {}
    gs = gradient_bound_series(result)
    out["grad_max_interior"] = gs.max_interior
    out["grad_reference"] = gs.reference
    out["grad_flagged"] = int(gs.flagged.size)
    out["max_principle_violation"] = float(np.max(result.series["max_principle_violation"]))
    out["curvature_residual"] = minimal_surface_residual(result.u, p.group, p.eps, p.grid)
    for k in diag["right_derivative"]:
        extra[f"rg_residual_{k}"] = residual_from_state(p, result.state, k)
    if diag["divergence"]:
        extra["divergence_gap"] = divergence_consistency(result.u, p.group, p.eps, p.grid)
    if diag["bernstein"]:
        stepper_fields = [result.previous, result.u] if result.previous is not None else None
        if stepper_fields is not None:
            for k in range(1, p.group.n + 1):
                b = bernstein_fields(stepper_fields, [result.state.t - result.state.dt, result.state.t], k,
                                     diag["bernstein_delta"], p.group, p.eps, p.grid)
                extra[f"bernstein_c0_{k}"] = b.c0
                extra[f"bernstein_c1_{k}"] = b.c1
    if report.checkpoints:
        report.checkpoints[-1].update(extra)
    out["extra"] = extra
    tag = eps_tag(eps)
    out_dir = Path(out_dir)
    out["files"].append(str(write_csv(out_dir / f"diagnostics_eps_{tag}.csv", ("t", "quantity", "value"),
                                      report.rows())))
    if cfg.write_snapshots:
        for snap in result.snapshots[1:]:
            name = f"u_eps_{tag}_t_{format_float(snap.t).replace('.', 'p')}.snap"
            out["files"].append(str(write_snapshot(out_dir / name, snap.u, p.grid, cfg.group, eps, snap.t)))

    certs = []
    if diag["barrier_points"] and eps > 0:
        v = [s.u - p.phi_values for s in result.snapshots]
        for x0 in diag["barrier_points"]:
            c = certify_point(p.group, eps, p.grid, p.phi_values, tuple(x0), v=v)
            gc = boundary_gradient_check([s.u for s in result.snapshots], p.phi_values, c.spec, p.group, p.grid)
            certs.append((c.row(), gc.ratio, gc.bound, gc.passed))
    out["certificates"] = certs

    doubling = []
    if diag["doubling_radii"] and diag["doubling_samples"] and eps > 0:
        rep = doubling_ratio(p.group, eps, p.grid, diag["doubling_samples"], diag["doubling_radii"],
                             stencil=diag["doubling_stencil"])
        doubling = list(rep.rows())
        for _, r, why in rep.skipped:
            log.warning("eps=%s: doubling radius %s skipped (%s)", eps, r, why)
    out["doubling"] = doubling

    holder = []
    if diag["holder_alpha"] and eps > 0:
        mg = metric_graph(p.group, eps, p.grid, 3)
        samples = [(s.t, s.u) for s in result.snapshots]
        for alpha in diag["holder_alpha"]:
            est = holder_seminorm(samples, mg, alpha, n_pairs=diag["holder_pairs"], seed=cfg.seed)
            holder.append((eps, alpha, est.seminorm))
    out["holder"] = holder
    return out


class ExperimentResult:
    def __init__(self, summary: dict, files: list):
        self.summary = summary
        self.files = files

    @property
    def passed(self) -> bool:
        return bool(self.summary["all_pass"])

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def _inv(summary, name, passed, value=None, threshold=None):
    summary["invariants"][name] = {"pass": bool(passed), "value": value, "threshold": threshold}


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, steady: bool | None = None) -> ExperimentResult:
    """Execute every eps of ``cfg`` and write tables, snapshots and ``summary.json``."""
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steady = cfg.steady if steady is None else steady
    if not steady and not math.isfinite(cfg.T):
        raise ValueError("flow.T is required unless the run is in steady mode")
    eps_list = list(cfg.eps)
    if cfg.include_zero and 0.0 not in eps_list:
        eps_list.append(0.0)
    tasks = [(cfg.source, e, steady, str(out_dir)) for e in eps_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eps_task, tasks))
    else:
        results = [_eps_task(t) for t in tasks]
    by_eps = {r["eps"]: r for r in results}
    diag = cfg.diagnostics
    files = [f for r in results for f in r["files"]]
    summary = {"group": cfg.group, "eps": eps_list, "seed": cfg.seed, "steady_mode": steady,
               "runs": {}, "invariants": {}}
    for r in results:
        summary["runs"][format_float(r["eps"])] = {
            "steps": r["steps"], "t": r["t"], "steady": r["steady"], "capped": r["capped"],
            "grad_max_interior": r["grad_max_interior"], "grad_reference": r["grad_reference"],
            "max_principle_violation": r["max_principle_violation"],
            "curvature_residual": r["curvature_residual"], **r["extra"],
        }

    if diag["max_principle"]:
        worst = max(r["max_principle_violation"] for r in results)
        _inv(summary, "max_principle", worst <= 1e-12, worst, 1e-12)
    if diag["gradient_bound"]:
        flagged = sum(r["grad_flagged"] for r in results)
        _inv(summary, "gradient_bound", flagged == 0, flagged, 0)
        sweep = [by_eps[e]["grad_max_interior"] for e in cfg.eps]
        if len(sweep) > 1:
            lo, hi = min(sweep), max(sweep)
            spread = (hi - lo) / hi if hi > 0 else 0.0
            _inv(summary, "gradient_uniformity", spread <= diag["gradient_uniformity"], spread,
                 diag["gradient_uniformity"])
    grid = _grid(cfg)
    sweep_rows = []
    if diag["eps_limit"] and len(cfg.eps) > 1:
        fields = {e: by_eps[e]["u"] for e in cfg.eps}
        zero = by_eps[0.0]["u"] if cfg.include_zero else None
        table = eps_limit_study(fields, grid, zero)
        _inv(summary, "eps_cauchy_decreasing", table.cauchy_decreasing, table.gaps)
        if zero is not None:
            _inv(summary, "eps_zero_gap", table.zero_within, table.zero_gap, 2.0 * table.gaps[-1])
        sweep_rows += [(a, f"gap_to_{format_float(b)}", gap) for a, b, gap in table.rows()]
    if steady and diag["minimal_surface"]:
        ok = all(r["steady"] for r in results)
        worst = max(r["curvature_residual"] for r in results)
        _inv(summary, "steady_reached", ok, ok)
        _inv(summary, "minimal_surface", worst <= 10 * cfg.steady_tol, worst, 10 * cfg.steady_tol)
    tol = diag["residual_tol"]
    if tol is not None:
        worst = 0.0
        for r in results:
            vals = [r["curvature_residual"]] + [v for k, v in r["extra"].items()
                                                 if k.startswith("rg_residual")]
            worst = max(worst, max(vals))
        _inv(summary, "residuals", worst <= tol, worst, tol)
    for r in results:
        sweep_rows.append((r["eps"], "grad_max_interior", r["grad_max_interior"]))
        sweep_rows.append((r["eps"], "curvature_residual", r["curvature_residual"]))
        for k, v in sorted(r["extra"].items()):
            sweep_rows.append((r["eps"], k, v))
    files.append(str(write_csv(out_dir / "sweep.csv", ("eps", "quantity", "value"), sweep_rows)))

    certs = [c for r in results for c in r["certificates"]]
    if certs:
        files.append(str(write_csv(out_dir / "certificates.csv", CERTIFICATE_COLUMNS, [c[0] for c in certs])))
        _inv(summary, "barrier_certificates", all(c[0][-1] == 1 for c in certs), len(certs))
        _inv(summary, "boundary_gradient", all(c[3] for c in certs), max(c[1] for c in certs))
    doubling = [row for r in results for row in r["doubling"]]
    if doubling:
        files.append(str(write_csv(out_dir / "doubling.csv", ("eps", "r_or_alpha", "value"), doubling)))
        per_eps = {}
        for e, _, v in doubling:
            per_eps[e] = max(per_eps.get(e, 0.0), v)
        spread = max(per_eps.values()) / min(per_eps.values())
        _inv(summary, "doubling_uniformity", spread < 2.0, spread, 2.0)
    holder = [row for r in results for row in r["holder"]]
    if holder:
        files.append(str(write_csv(out_dir / "holder.csv", ("eps", "r_or_alpha", "value"), holder)))
        _inv(summary, "holder_finite", all(math.isfinite(v) for *_, v in holder), len(holder))

    summary["all_pass"] = all(v["pass"] for v in summary["invariants"].values())
    files.append(str(write_json(out_dir / "summary.json", summary)))
    return ExperimentResult(summary, files)
