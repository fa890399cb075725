"""Exception types shared across the toolkit."""


class GancompError(Exception):
    """Base class for all toolkit errors."""


class SpecError(GancompError, ValueError):
    """An architecture description violates its invariants."""


class ShapeError(GancompError, ValueError):
    """A tensor argument has an incompatible shape."""


class PlanError(GancompError, ValueError):
    """A pruning plan references invalid layers/channels or empties a layer."""


class MaskError(GancompError, ValueError):
    """A content mask is non-binary or has the wrong resolution."""


class ConfigError(GancompError, ValueError):
    """A run configuration is malformed or inconsistent."""


class UnsupportedArchitectureError(GancompError, TypeError):
    """A model does not expose the structure an operation requires (e.g. no GAP head for CAM)."""


class NumericalAbort(GancompError, RuntimeError):
    """Training or optimization hit a non-finite value; a diagnostic snapshot was taken."""

    def __init__(self, message, snapshot=None, snapshot_path=None):
        super().__init__(message)
        self.snapshot = snapshot
        self.snapshot_path = snapshot_path


class ProjectionError(NumericalAbort):
    """Latent-space projection diverged even after a restart."""
