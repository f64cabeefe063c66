"""Exception hierarchy shared across the package."""


class HestonRepError(Exception):
    """Base class for all package errors."""


class ParameterError(HestonRepError, ValueError):
    """Invalid model or configuration parameters."""


class GrowthViolation(HestonRepError, ValueError):
    """A growth-bound inequality fails; the message names the inequality."""


class QuadratureError(HestonRepError, RuntimeError):
    """Adaptive quadrature failed to converge."""


class SolverError(HestonRepError, RuntimeError):
    """A linear / complementarity solver failed to converge."""


class StepCapExceeded(HestonRepError, RuntimeError):
    """A simulated path exceeded the configured step cap."""


class ConfigError(HestonRepError, ValueError):
    """Experiment configuration failed to parse or cross-validate."""
