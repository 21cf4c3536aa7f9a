"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with each other or with a topology."""


class DataError(ValueError):
    """Input data could not be parsed or is unusable."""


class ConfigError(ValueError):
    """A run configuration is malformed."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite objective."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"objective became non-finite at epoch {epoch}")


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before converging."""
