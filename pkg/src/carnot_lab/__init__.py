"""Numerical toolkit for homogeneous approximations of weighted frames and
of the coordinate transition maps between their charts."""

from .charts import Chart, FlowIntegrator, curve_pair, exp_map, phi_grouped, theta1, theta1_inv, theta2
from .convergence import ConvergenceReport, Schedule, TolerancePolicy, Verdict, classify
from .errors import CarnotLabError
from .expr import parse
from .frames import VectorField, WeightedFrame, commutator, frame_from_strings, verify_commutator_table
from .geometry import Weights, dilate, quasinorm
from .nilpotent import (check_graded_structure, curve_divergence, exp_identity_check, nilpotentize_numeric,
                        nilpotentize_symbolic, rescale_field)
from .quasimetric import (DistanceFn, box_quasimetric, cone_limit, d_inf, estimate_quasimetric_constants,
                          fit_distance_bounds, isometry_check)
from .transition import (TransitionMap, check_box_sandwich, equivalence_experiment, inverse_map_limit,
                         jacobian_limit, map_limit, pushforward_limit_check, taylor_vanishing_test)

__version__ = "0.1.0"
