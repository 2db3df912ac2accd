"""Monte Carlo penalization solver for backward stochastic variational inequalities."""

from .convex import (Ball, Box, ConvexSpec, Halfspace, Polyhedron, Quadratic, ScaledNorm, YosidaView, Zero,
                     catalog_examples, check_convex_spec, check_yosida_inequalities, make_convex, normalize,
                     resolvent_of_yosida)
from .model import (DriverSpec, ForwardSpec, Problem, SamplingBudget, TerminalSpec, check_assumptions, f_sharp,
                    make_driver, make_forward, make_terminal)
from .paths import PathEnsemble, TimeGrid, generate
from .regression import BasisSpec, conditional_expectation
from .report import EstimateReport
from .solver import (DiscreteSolution, NumericalAbort, SchemeConfig, solve_limit, solve_penalized,
                     subdiff_measure_check)
from .estimates import (check_appendix_estimate, check_prop1, check_tv_bound, check_uniqueness_stability,
                        penetration_rate_study, uniqueness_sweep, weight_process)
from .continuation import (extract_solution, run_epsilon_schedule, run_refinement_schedule,
                           run_truncation_schedule)
from .oracle import TreeSpec, tree_solve

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Box",
    "ConvexSpec",
    "Halfspace",
    "Polyhedron",
    "Quadratic",
    "ScaledNorm",
    "YosidaView",
    "Zero",
    "catalog_examples",
    "check_convex_spec",
    "check_yosida_inequalities",
    "make_convex",
    "normalize",
    "resolvent_of_yosida",
    "DriverSpec",
    "ForwardSpec",
    "Problem",
    "SamplingBudget",
    "TerminalSpec",
    "check_assumptions",
    "f_sharp",
    "make_driver",
    "make_forward",
    "make_terminal",
    "PathEnsemble",
    "TimeGrid",
    "generate",
    "BasisSpec",
    "conditional_expectation",
    "EstimateReport",
    "DiscreteSolution",
    "NumericalAbort",
    "SchemeConfig",
    "solve_limit",
    "solve_penalized",
    "subdiff_measure_check",
    "check_appendix_estimate",
    "check_prop1",
    "check_tv_bound",
    "check_uniqueness_stability",
    "penetration_rate_study",
    "uniqueness_sweep",
    "weight_process",
    "extract_solution",
    "run_epsilon_schedule",
    "run_refinement_schedule",
    "run_truncation_schedule",
    "TreeSpec",
    "tree_solve",
]
