"""Shared exception types."""


class ValidationError(ValueError):
    """Bad input: shape mismatch, out-of-range value, malformed config."""


class NumericError(RuntimeError):
    """Numerical failure at runtime: NaN loss, divergence, exhausted sampling budget."""


class UnsupportedMethodError(ValidationError):
    """Requested explanation method cannot run against the given model."""
