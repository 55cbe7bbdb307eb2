"""Loewner evolution driven by symmetric alpha-stable and truncated stable processes."""

__version__ = "0.1.0"

from .errors import (Falsification, FitError, NumericalError, ParameterError,
                     ResolutionError, SwallowedError)
from .stable_process import (LevyPath, StableParams, TruncationConfig, levy_constant,
                             recombine_large_jumps, sample_large_jumps, sample_recombined_path,
                             sample_stable_increment, sample_stable_path, sample_truncated_path,
                             truncated_frac_laplacian)
from .loewner_core import (Driver, HullApprox, MapChain, SlitStep, backward_step, build_chain,
                           capacity_coefficient, compute_trace, evaluate_forward,
                           evaluate_inverse, forward_step, swallow_time, trace_points)
from .flow_dynamics import (exit_probability_experiment, height_reach_experiment,
                            real_line_flow, run_backward_flow, time_changed_log_deriv)
from .geometry_stats import (box_count, check_lemma_l1, check_lemma_l2,
                             derivative_moment_experiment, dimension_estimate,
                             hausdorff_distance, modulus_estimate, rcll_check,
                             rescaled_hull_experiment)
from .reports import ExperimentReport
