"""Data-driven MPC with persistence-of-excitation maintenance.

The package turns recorded input/output data into a receding-horizon
controller and, crucially, keeps the data it generates informative: before
every step it characterizes the set of next inputs that would break the
window's persistence of excitation (a single hyperplane, in the critical
case) and steers clear of it by a configurable margin.
"""

from .config import (
    ExperimentConfig,
    default_epsilons,
    parse_config,
    serialize_config,
    to_controller_config,
    validate_config,
)
from .controller import (
    Branch,
    BranchOutcome,
    BranchRecord,
    ControllerConfig,
    DataWindow,
    InputHalfspace,
    OcpInstance,
    StepDiagnostics,
    VariableLayout,
    assemble_ocp,
    baseline_p0_step,
    controller_step,
    solve_branches,
    update_window,
)
from .errors import (
    ConfigError,
    ExcitationImpossibleError,
    InvalidInputError,
    LostExcitationError,
    MisuseError,
    NoFeasibleInputError,
    PempcError,
    SimulationDivergedError,
    WindowTooShortError,
)
from .hankel import (
    Box,
    ExcitationGeometry,
    ExcitationStatus,
    HalfSpacePair,
    HankelBlocks,
    build_hankel,
    excitation_geometry,
    hankel_blocks,
    intersects_input_set,
    is_pe,
    pe_condition_metric,
    pe_constraint_pair,
)
from .linalg import (
    RankReport,
    condition_number,
    left_null_vector,
    numerical_rank,
)
from .plant import (
    CellSummary,
    ClosedLoopLog,
    EpsilonSummary,
    PlantModel,
    RunMetrics,
    RunMode,
    SweepReport,
    four_tank_model,
    initial_excitation,
    metrics,
    plant_step,
    run_closed_loop,
    sweep,
)
from .qp import (
    QpInstance,
    QpSolution,
    QpStatus,
    kkt_residuals,
    solve_qp,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
