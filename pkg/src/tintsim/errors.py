"""Error taxonomy shared across the package.

The CLI maps these onto its exit-code contract: config errors exit 2,
I/O errors exit 3, failed verification checks exit 1.
"""


class TintError(Exception):
    """Base class for all package errors."""


class DimensionError(TintError):
    """Shapes of the operands do not line up."""


class ConfigError(TintError):
    """Invalid or inconsistent configuration values."""


class DegenerateInputError(TintError):
    """Normalization statistics below the numeric floor (sigma < 1e-12)."""


class ConstructionError(TintError):
    """The requested simulator cannot be built (capacity/divisibility)."""


class PreconditionError(TintError):
    """Theorem precondition violated; carries the violated bound."""

    def __init__(self, message: str, bound: float | None = None):
        super().__init__(message)
        self.bound = bound


class BudgetError(TintError):
    """Requested unrolled depth exceeds the configured budget."""


class CheckpointError(TintError):
    """Corrupt, truncated, or incompatible checkpoint data."""
