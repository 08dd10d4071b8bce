class ValidationError(ValueError):
    """Input violates a documented invariant (shape, normalisation, range)."""


class ResourceError(RuntimeError):
    """A computation would exceed a configured dimension or memory cap."""
