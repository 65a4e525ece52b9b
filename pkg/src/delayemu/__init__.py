"""Simulation and Lyapunov-Krasovskii checks for Euler-emulated,
observer-based sampled-data control of nonlinear time-delay systems."""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, DomainError, EvaluationError
from .segments import (
    Segment,
    Trajectory,
    constant_segment,
    euler_extend,
    segment_eval,
    slope_bound,
    split,
    stack,
    sup_norm,
    window,
    zero_segment,
)
from .models import (
    ModelPair,
    build_model,
    eval_composite_feedback,
    eval_extended_rhs,
    eval_stacked_rhs,
)
from .engine import IntegratorConfig, integrate_continuous, integrate_extended
from .sampled import (
    Partition,
    SampledRun,
    generate_partition,
    reconstruct_observer_history,
    sample_initial_state,
    simulate_sampled,
)
from .krasovskii import (
    CheckReport,
    FunctionalSuite,
    check_assumption1,
    check_smooth_separability,
    check_steepest_descent,
    driver_derivative,
    linear_scalar_suite,
)
from .certify import (
    ScenarioConfig,
    StabilityReport,
    certify_practical_stability,
    convergence_study,
    load_config,
)
