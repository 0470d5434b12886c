"""Exception types raised across the package."""


class SelfTrainLabError(Exception):
    """Base class for all package errors."""


class ShapeError(SelfTrainLabError, ValueError):
    """Array dimensions do not agree."""


class ConfigError(SelfTrainLabError, ValueError):
    """Invalid parameters or configuration document."""


class InsufficientDataError(ConfigError):
    """Too few samples for the requested split or partition."""


class DegenerateActivationError(SelfTrainLabError, ValueError):
    """A curvature constant (rho, mu) is non-positive for the given inputs."""


class DivergenceError(SelfTrainLabError, ArithmeticError):
    """An iterate became non-finite during training."""

    def __init__(self, message, step=None, outer=None):
        super().__init__(message)
        self.step = step
        self.outer = outer


class ConditioningError(SelfTrainLabError, ArithmeticError):
    """A least-squares design matrix is numerically rank deficient."""

    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number
