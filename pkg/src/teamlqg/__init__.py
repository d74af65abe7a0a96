"""Decentralized LQG control and estimation for influence-coupled teams."""

from .errors import (
    InfluenceError,
    JointSizeError,
    NoActionError,
    RiccatiError,
    SingularInnovationError,
)
from .model import (
    Dimensions,
    StageMatrices,
    TeamModel,
    ValidationReport,
    deep_aggregate,
    from_json_dict,
    gauge_decompose,
    gauge_recompose,
    load_model,
    make_model,
    normalize_influence,
    resize_team,
    save_model,
    to_json_dict,
    validate,
)
from .riccati import RiccatiPass, solve_riccati
from .filters import (
    EstimatorState,
    GlobalFilterSchedule,
    LocalFilterSchedule,
    combined_agent_estimate,
    init_state,
    measurement_update,
    precompute_global,
    precompute_local,
    step,
    team_error_covariance,
    time_predict,
)
from .strategy import (
    CustomLinear,
    MeanField,
    Optimal,
    ZeroAction,
    act_custom,
    act_meanfield,
    act_optimal,
    load_custom_strategy,
    meanfield_trajectory,
    optimal_coefficients,
    parse_strategy,
)
from .oracle import (
    brute_force_optimize,
    build_joint_model,
    centralized_filter,
    exact_cost,
)
from .sim import (
    CostEstimate,
    benchmark_convergence_model,
    convergence_experiment,
    evaluate_cost,
    paired_cost_gap,
    rollout,
    run_rollouts,
)

__version__ = "0.1.0"
