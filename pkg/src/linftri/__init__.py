"""Globally optimal min-max (L-infinity) multi-view triangulation with a coreset loop."""

from .coreset import (CoresetConfig, CoresetResult, CoresetTraceEntry, backtrack_bound,
                      classify_condition, error_ratio, run_coreset)
from .errors import (BudgetExhausted, CheiralityCollapse, CheiralityViolation, DegenerateGeometry,
                     DomainError, Exhausted, GeometryRetryExhausted, IoError, LinfTriError,
                     MissingMetadata, ParseError)
from .geometry import (CameraMatrix, ConeForm, Observation, TriangulationInstance,
                       displacement_k, linear_initial_estimate, obtuse_test, project, residual,
                       to_cone_form)
from .inner import available_backends, feasible_at_level, minimize_maxcone, set_backend
from .io import load_instance, save_instance
from .outliers import OutlierConfig, OutlierResult, remove_outliers
from .solvers import Solution, SolveOptions, extract_support, solve, solve_bisection, solve_dinkelbach
from .synth import SyntheticConfig, generate_instances, true_inlier_mask

__version__ = "0.1.0"

__all__ = [
    "BudgetExhausted", "CameraMatrix", "CheiralityCollapse", "CheiralityViolation", "ConeForm",
    "CoresetConfig", "CoresetResult", "CoresetTraceEntry", "DegenerateGeometry", "DomainError",
    "Exhausted", "GeometryRetryExhausted", "IoError", "LinfTriError", "MissingMetadata",
    "Observation", "OutlierConfig", "OutlierResult", "ParseError", "Solution", "SolveOptions",
    "SyntheticConfig", "TriangulationInstance", "available_backends", "backtrack_bound",
    "classify_condition", "displacement_k", "error_ratio", "extract_support", "feasible_at_level",
    "generate_instances", "linear_initial_estimate", "load_instance", "minimize_maxcone",
    "obtuse_test", "project", "remove_outliers", "residual", "run_coreset", "save_instance",
    "set_backend", "solve", "solve_bisection", "solve_dinkelbach", "to_cone_form",
    "true_inlier_mask",
]
