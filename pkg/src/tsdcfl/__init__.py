"""Two-stage dynamic gradient coding with a drift-plus-penalty scheduler, plus a slot simulator."""
from .coding import (
    AuxiliaryMatrix,
    CodeMatrix,
    DecodeResult,
    StragglerPattern,
    TwoStageCode,
    aggregate_decode,
    build_auxiliary,
    build_support,
    build_two_stage_code,
    check_span_condition,
    cyclic_repetition,
    decode,
    encode_partials,
    fill_code_matrix,
    fractional_repetition,
    stage1_assignment,
)
from .config import ExperimentConfig
from .errors import (
    ConfigError,
    EmptyPartition,
    EnergyViolation,
    EpochFailed,
    IndivisibleWorkers,
    InfeasibleAssignment,
    MissingPartial,
    SingularSubmatrix,
    TooFewSamples,
    TSDCFLError,
)
from .simulator import RunReport, Simulation, run_experiment

__version__ = "0.1.0"
