"""Hybrid zero dynamics toolbox for planar underactuated bipeds.

Simulation of point-foot walkers as hybrid systems, virtual-constraint
controller synthesis, reduction to the hybrid zero dynamics, Poincare-map
gait analysis and parameter optimization of periodic walking gaits.
"""

from .errors import (ConfigError, ConvergenceError, DimensionError,
                     DivergenceError, DomainError, HzdError, InfeasibleError,
                     MonotonicityError, NonTerminatingStepError)
from .model import RobotModel, compass, fivelink, load_model, threelink
from .control import (FeedbackGains, VirtualConstraint, closed_loop_torque,
                      load_controller, save_controller, u_star)
from .impact import apply_impact
from .zerodyn import (ZeroDyn1D, ZeroDynReduced, delta_zero, fixed_point_zeta,
                      hybrid_invariance_residual, kappa12, make_invariant,
                      restricted_poincare_closed)
from .poincare import (event_based_step, event_gain_design, fixed_point_solve,
                       integrate_step, poincare_map, restricted_poincare_numeric,
                       stability_spectrum, walk)
from .gaitopt import (GaitObjective, GaitSolution, constraint_from_trajectory,
                      cost, evaluate_gait, ground_reaction, optimize)

__version__ = "0.1.0"

__all__ = [
    "HzdError", "ConfigError", "DimensionError", "DomainError",
    "ConvergenceError", "DivergenceError", "InfeasibleError",
    "MonotonicityError", "NonTerminatingStepError",
    "RobotModel", "compass", "threelink", "fivelink", "load_model",
    "VirtualConstraint", "FeedbackGains", "closed_loop_torque",
    "load_controller", "save_controller", "u_star",
    "apply_impact",
    "ZeroDyn1D", "ZeroDynReduced", "delta_zero", "fixed_point_zeta",
    "hybrid_invariance_residual", "kappa12", "make_invariant",
    "restricted_poincare_closed",
    "integrate_step", "poincare_map", "walk", "fixed_point_solve",
    "stability_spectrum", "restricted_poincare_numeric",
    "event_gain_design", "event_based_step",
    "GaitObjective", "GaitSolution", "cost", "evaluate_gait",
    "ground_reaction", "optimize", "constraint_from_trajectory",
    "__version__",
]
