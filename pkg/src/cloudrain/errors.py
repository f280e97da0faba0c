"""Exception types shared across the package."""


class CloudRainError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CloudRainError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(CloudRainError, ArithmeticError):
    """Non-finite values or a solver that failed to converge."""


class UsageError(CloudRainError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class TrainingError(CloudRainError, RuntimeError):
    """Training diverged."""

    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
