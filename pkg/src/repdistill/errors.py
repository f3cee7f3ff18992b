"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration or precondition violation caught before any work."""


class DataLoadError(RuntimeError):
    """Dataset files missing or unreadable; message names the offending file."""


class ShapeMismatchError(ValueError):
    """Tensor shapes incompatible with the operation."""


class UsageError(ValueError):
    """Caller violated an operation contract (mixed labels, empty batch, ...)."""


class EmptyStateError(RuntimeError):
    """Operation requires state (e.g. a cluster assignment) that is empty."""


class NumericalInstabilityError(RuntimeError):
    """Non-finite loss or gradient; message carries iteration context."""
