"""Data-enabled predictive control toolkit.

Plan inputs for a plant directly from one recorded trajectory (no model
fit), with a model-based MPC path over the same cost and constraints for
comparison, a quadcopter case study, and benchmark experiments behind the
``deepc-bench`` command line.
"""

from .behavioral import (
    DataMatrices,
    InsufficientDataWarning,
    Trajectory,
    hankel,
    is_persistently_exciting,
    min_data_length,
    partition_data,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .controllers import (
    ControlProblem,
    DeepcController,
    InfeasibleStepError,
    MpcController,
    RecedingHorizonResult,
    RegularizedDeepcController,
    SolveResult,
    StepRecord,
    closed_loop_cost,
    low_rank_approx,
    run_receding_horizon,
    solve_deepc,
    solve_mpc,
    solve_regularized_deepc,
    write_step_diagnostics,
)
from .ltisys import (
    InconsistentWindowError,
    LtiPlant,
    StateSpace,
    UnobservableSystemError,
    WindowRankError,
    lag,
    observability_matrix,
    random_controllable_system,
    read_statespace,
    reconstruct_initial_state,
    simulate,
    toeplitz_impulse,
    write_statespace,
)
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    load_config,
    parse_config_text,
    run_experiment,
)
from .qpcore import (
    OneNormSplit,
    QpProblem,
    QpSettings,
    QpSolution,
    embed_one_norm,
    solve_qp,
)
from .quadsim import (
    DivergenceError,
    QuadParams,
    QuadPlant,
    QuadState,
    collect_excitation_data,
    leveling_command,
    quad_step,
)
from .sysid import IdResult, RankDeficientRegressorWarning, identify_full_state

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
