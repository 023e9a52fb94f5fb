"""Exception hierarchy shared by the solver, model and CLI layers."""

from __future__ import annotations


class FpUnrollError(Exception):
    """Base class for all package errors."""


class DivergedError(FpUnrollError):
    """An operator produced a non-finite value."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite value produced at iteration {iteration}")


class IllConditionedError(FpUnrollError):
    """The Anderson weight subproblem could not be solved."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class DegenerateInputError(FpUnrollError, ValueError):
    pass


class ShapeError(FpUnrollError, ValueError):
    pass


class NumericError(FpUnrollError):
    """Non-finite activation or loss inside the neural model or trainer."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite value at step {step}")


class MissingIntermediatesError(FpUnrollError):
    pass


class CheckpointError(FpUnrollError):
    pass


class ConfigError(FpUnrollError, ValueError):
    pass
