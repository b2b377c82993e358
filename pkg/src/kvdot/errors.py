"""Exception types raised by kvdot."""


class ConfigurationError(ValueError):
    """Invalid parameters or mismatched inputs."""


class NumericalError(RuntimeError):
    """A linear solve failed to reach the requested accuracy."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContractError(RuntimeError):
    """Cached state used with inputs it was not computed for."""
