"""Planning with learned control-affine dynamics inside trusted domains.

The library estimates where a learned one-step model can be trusted (via
statistically overestimated Lipschitz constants of the model error), plans
trajectories that never leave that region and always admit a one-step
feedback law, and executes them with tracking guaranteed within the domain's
error bound.
"""

__version__ = "0.1.0"

from .dynamics import SystemSpec, get_system, step_quadrotor, step_sinusoid
from .model import (
    ControlAffineModel,
    Dataset,
    Hyperparams,
    Mlp,
    eval_g0,
    eval_g1,
    eval_model,
    load_model,
    save_model,
    train_model,
)
from .lipschitz import (
    LipschitzEstimate,
    SlopeSampleConfig,
    WeibullFit,
    estimate_lipschitz,
    fit_reverse_weibull,
    inv_normal_cdf,
    ks_test,
    max_slope,
)
from .domain import (
    DomainFailure,
    NnIndex,
    TrustedDomain,
    compute_epsilon,
    error_stats,
    expand_radius,
    filter_sd,
    in_d_epsilon,
    select_r_and_domain,
)
from .feedback import (
    OneStepCertificate,
    goal_invariance_check,
    one_step_exists,
    smallest_singular_value,
    solve_one_step,
)
from .planner import (
    AxisBox,
    PlannerConfig,
    PlanProblem,
    PlanTimeout,
    Trajectory,
    audit_trajectory,
    in_collision,
    plan,
    sample_state,
)
from .executor import (
    ExecutionTrace,
    TrackingStats,
    aggregate_stats,
    execute_closed_loop,
    execute_open_loop,
    hold_at_goal,
)

__all__ = [name for name in dir() if not name.startswith("_")]
