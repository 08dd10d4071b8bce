"""Input validation helpers shared by the estimator-style classes and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ValidationError
from .source import CompoundSource, CqqState


def check_source(source) -> CompoundSource:
    """Accept a CompoundSource, a single CqqState, or a JSON-like dict."""
    if isinstance(source, CompoundSource):
        return source
    if isinstance(source, CqqState):
        return CompoundSource([source])
    if isinstance(source, dict):
        from .source import source_from_json

        return source_from_json(source)
    raise ValidationError(f"expected a compound source, got {type(source).__name__}")


def check_int(value, name: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValidationError(f"{name} must be ≥ {minimum}")
    if maximum is not None and value > maximum:
        raise ValidationError(f"{name} must be ≤ {maximum}")
    return value


def check_real(value, name: str, low: float | None = None, high: float | None = None,
               low_open: bool = False, high_open: bool = False) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number") from None
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite")
    if low is not None and (value < low or (low_open and value == low)):
        raise ValidationError(f"{name} must be {'>' if low_open else '≥'} {low}")
    if high is not None and (value > high or (high_open and value == high)):
        raise ValidationError(f"{name} must be {'<' if high_open else '≤'} {high}")
    return value
