"""Network-aware data movement for machine learning on fog networks.

Simulates devices that collect streaming training data and decide, slot by
slot, whether to process each datapoint where it landed, ship it to a
neighbor, or drop it; solves for cost-optimal movement plans; and checks
the closed-form analyses (loss bounds, queueing capacity, star-network
optima, offloading gains) against simulation.
"""

from .analytics import (
    BoundInputs,
    HierarchicalSplit,
    QueueParams,
    ViolationEstimate,
    capacity_for_wait,
    dm1_mean_wait,
    dm1_root,
    divergence_growth,
    expected_capacity_violations,
    gradient_divergence_bound,
    hierarchical_cost,
    hierarchical_optimum,
    local_loss_bound,
    offloading_savings,
    window_drift,
)
from .learning import (
    Dataset,
    MlpArch,
    ModelState,
    SoftmaxArch,
    aggregate,
    evaluate,
    gaussian_blobs,
    generate_arrivals,
    init_model,
    load_idx_dataset,
    local_update,
    read_idx,
    split_dataset,
    write_idx,
)
from .optimizer import (
    CostLedger,
    EstimationPriors,
    InfeasibleMovementError,
    LinearError,
    MovementPlan,
    MovementProblem,
    PreconditionError,
    SqrtError,
    estimate_problem,
    greedy_unconstrained,
    identity_plan,
    linear_problem,
    plan_from_dict,
    plan_to_dict,
    problem_from_dict,
    problem_to_dict,
    slice_problem,
    solve_linear,
    solve_sqrt,
    sqrt_problem,
)
from .simulator import (
    CapacityConfig,
    ConfigError,
    CostConfig,
    DatasetConfig,
    ErrorWeightConfig,
    InfoConfig,
    LearningConfig,
    SimConfig,
    SimResult,
    TopologyConfig,
    run,
    run_centralized,
    simulate_on,
    sweep,
)
from .topology import (
    ChurnConfig,
    DegreeDistribution,
    NetworkState,
    apply_churn,
    build_fully_connected,
    build_hierarchical,
    build_random,
    build_singleton,
    build_watts_strogatz,
    draw_uniform_costs,
    load_cost_trace,
    set_error_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "CapacityConfig",
    "ChurnConfig",
    "ConfigError",
    "CostConfig",
    "CostLedger",
    "Dataset",
    "DatasetConfig",
    "DegreeDistribution",
    "ErrorWeightConfig",
    "EstimationPriors",
    "HierarchicalSplit",
    "InfeasibleMovementError",
    "InfoConfig",
    "LearningConfig",
    "LinearError",
    "MlpArch",
    "ModelState",
    "MovementPlan",
    "MovementProblem",
    "NetworkState",
    "PreconditionError",
    "QueueParams",
    "SimConfig",
    "SimResult",
    "SoftmaxArch",
    "SqrtError",
    "TopologyConfig",
    "ViolationEstimate",
    "aggregate",
    "apply_churn",
    "build_fully_connected",
    "build_hierarchical",
    "build_random",
    "build_singleton",
    "build_watts_strogatz",
    "capacity_for_wait",
    "dm1_mean_wait",
    "dm1_root",
    "divergence_growth",
    "draw_uniform_costs",
    "estimate_problem",
    "evaluate",
    "expected_capacity_violations",
    "gaussian_blobs",
    "generate_arrivals",
    "gradient_divergence_bound",
    "greedy_unconstrained",
    "hierarchical_cost",
    "hierarchical_optimum",
    "identity_plan",
    "init_model",
    "linear_problem",
    "load_cost_trace",
    "load_idx_dataset",
    "local_loss_bound",
    "local_update",
    "offloading_savings",
    "plan_from_dict",
    "plan_to_dict",
    "problem_from_dict",
    "problem_to_dict",
    "read_idx",
    "run",
    "run_centralized",
    "set_error_weights",
    "simulate_on",
    "slice_problem",
    "solve_linear",
    "solve_sqrt",
    "split_dataset",
    "sqrt_problem",
    "sweep",
    "window_drift",
    "write_idx",
]
