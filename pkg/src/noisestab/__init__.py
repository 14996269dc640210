"""Stabilization of unstable and chaotic one-dimensional maps by noise.

The package derives the constants behind two stochastic controls (a
multiplicative noise control and a directed-walk control), runs their
switching combination, and verifies the convergence guarantees with a
reproducible Monte Carlo harness.
"""

__version__ = "0.1.0"

from .control import (ControlPlan, Phase, Trajectory, controller_next, dwc_step,
                      interval_index, mnc_step, run_trajectory)
from .errors import (ConfigurationError, DeltaUnderflowError, EvaluationError,
                     LambdaUndefinedError, NoiseStabError, NotStabilizableError,
                     OutOfBasinError)
from .experiments import (ExperimentConfig, ExperimentReport, convergence_experiment,
                          envelope_audit, lln_experiment, run_length_experiment,
                          stability_sweep)
from .maps import (LocalBounds, MapSpec, ValidationReport, builtin_map, custom_map,
                   local_bounds, map_eval, validate_map)
from .noise import (NoiseSpec, RngStream, bernoulli, bernoulli_sigma_window,
                    discrete, lambda_mc, log_theta_moments, lyapunov_exponent,
                    sample, tail_prob, uniform)
from .params import (CombinedParams, DwcLadder, DwcParams, MncParams, MncPolicy,
                     combined_envelope, derive_combined, derive_dwc, derive_mnc,
                     nbar_chebyshev, nbar_normal)

__all__ = [name for name in dir() if not name.startswith("_")]
