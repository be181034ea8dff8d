"""Multi-agent formation control with optimal-transport shape costs."""

from .costs import (
    CostBreakdown,
    ObstacleSpec,
    ShapeCostSpec,
    congestion_penalty,
    control_effort,
    evaluate,
    mean_destination_cost,
    obstacle_penalty,
    running_shape_cost,
    terminal_shape_cost,
    terminal_velocity_cost,
    total_cost,
)
from .dynamics import ControlSchedule, DoubleIntegrator, Trajectory, euler_step, initial_states, rollout
from .ot import (
    DiscreteMeasure,
    InvalidInputError,
    SinkhornUnderflowError,
    SinkhornWarning,
    SolverFailureError,
    TransportPlan,
    build_cost_matrix,
    emd,
    emd_value,
    solve_assignment,
    solve_exact,
    solve_sinkhorn,
)
from .scenarios import (
    CATALOG_NAMES,
    ScenarioError,
    ScenarioSpec,
    get_scenario,
    load_scenario,
    paper_scenarios,
    parse_scenario,
    save_scenario,
)
from .shooting import (
    DivergenceError,
    GradientReport,
    OptimizationResult,
    OptimizerOptions,
    check_gradient,
    cost_and_gradient,
    optimize,
)

__version__ = "0.1.0"
