"""Fixed-point iteration, Anderson acceleration and unrolled restoration models."""

from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DivergedError,
    FpUnrollError,
    IllConditionedError,
    MissingIntermediatesError,
    NumericError,
    ShapeError,
)
from .fixpoint import (
    AAConfig,
    BoundInputs,
    SolveTrace,
    anderson_iterate,
    contraction_bound,
    crossover_iterations,
    estimate_contraction,
    iterate,
    trace_diagnostics,
)
from .operators import AffineOperator, EnergyGradOperator, PerturbedOperator

__version__ = "0.1.0"

__all__ = [
    "AAConfig",
    "AffineOperator",
    "BoundInputs",
    "CheckpointError",
    "ConfigError",
    "DegenerateInputError",
    "DivergedError",
    "EnergyGradOperator",
    "FpUnrollError",
    "IllConditionedError",
    "MissingIntermediatesError",
    "NumericError",
    "PerturbedOperator",
    "ShapeError",
    "SolveTrace",
    "anderson_iterate",
    "contraction_bound",
    "crossover_iterations",
    "estimate_contraction",
    "iterate",
    "trace_diagnostics",
]
