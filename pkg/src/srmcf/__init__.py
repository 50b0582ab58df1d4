"""Riemannian-approximation solver for sub-Riemannian mean curvature flow of graphs."""
from .estimator import MeanCurvatureFlow
from .flow import FlowProblem, FlowState, RunResult, compare_runs, run, step
from .grid import Grid, ScalarField, unit_box
from .group import EpsilonFrame, GroupModel, make_model, parse_group

__version__ = "0.1.0"

__all__ = [
    "EpsilonFrame",
    "FlowProblem",
    "FlowState",
    "Grid",
    "GroupModel",
    "MeanCurvatureFlow",
    "RunResult",
    "ScalarField",
    "compare_runs",
    "make_model",
    "parse_group",
    "run",
    "step",
    "unit_box",
]
