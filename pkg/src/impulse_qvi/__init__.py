"""Impulse-control HJB-QVI solver with jump-diffusion dynamics."""
from .exceptions import (ChecksumError, ConfigError, ConvergenceError, EmptyTransactionSetError,
                         MonotonicityError, ProblemError, QVIError)
from .grid import CONTINUE, INTERVENE, STOPPED, Grid, Policy, ValueField
from .impulse import InterventionResult, apply_M, apply_M_field, iterate_M_terminal
from .io import RunManifest, load_config, load_run, save_run
from .kernels import BACKEND
from .levy import (DoubleExponentialJumps, GaussianJumps, JumpSampler, LevyModel, LocalQuadratic,
                   TemperedStable, integral_large, integral_small, sample_increment)
from .mc import (BoxExit, FixedStrategy, FixedTime, GridPolicy, PathRecord, calibrate_allowance,
                 check_dpp, estimate_value, simulate_path)
from .problem import (Domain, Elliptic, Parabolic, Problem, ValidationReport, to_elliptic,
                      to_parabolic, validate)
from .scheme import assemble, discretize_generator, kappa_tilde
from .solver import (Solution, SolverOptions, solve, solve_elliptic, solve_parabolic,
                     step_parabolic)
from .supersolution import (Supersolution, SupersolutionError, build_strict_supersolution,
                            perturbed_residuals)
from .verify import run_suite

__version__ = "0.1.0"
