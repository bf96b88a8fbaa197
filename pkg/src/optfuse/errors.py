"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Tensor shapes are invalid or incompatible for the requested kernel."""


class ConfigError(ValueError):
    """A model spec, policy, or benchmark configuration is invalid."""


class StateError(RuntimeError):
    """An operation was called outside its legal lifecycle point."""


class SchedulingContractError(RuntimeError):
    """A scheduler contract was violated (e.g. stepping a parameter whose
    gradient is not fully accumulated)."""


class GlobalInfoRequired(RuntimeError):
    """The requested schedule cannot host a policy that must observe all
    gradients before updating any parameter."""


class NumericError(ArithmeticError):
    """A numeric kernel failed (singular system, non-finite result)."""
