"""Input validation helpers.

Small guard functions used by config dataclasses and estimators. Each raises
:class:`~expomf.errors.ConfigurationError` naming the offending field, so CLI
users see which knob to fix.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigurationError, NotFittedError


def check_positive(name: str, value) -> float:
    """Require a finite value strictly greater than zero."""
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_nonnegative(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"{name} must be a non-negative finite number, got {value!r}")
    return float(value)


def check_count(name: str, value, minimum: int = 1) -> int:
    """Require an integer >= minimum."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_probability(name: str, value, open_interval: bool = True) -> float:
    """Require a probability, strictly inside (0, 1) unless open_interval=False."""
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a probability, got {value!r}")
    value = float(value)
    if open_interval:
        if not 0.0 < value < 1.0:
            raise ConfigurationError(f"{name} must lie strictly in (0, 1), got {value}")
    elif not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_choice(name: str, value: str, choices) -> str:
    if value not in choices:
        allowed = ", ".join(sorted(choices))
        raise ConfigurationError(f"{name} must be one of {{{allowed}}}, got {value!r}")
    return value


def check_seed(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ConfigurationError(f"{name} must be a non-negative integer seed, got {value!r}")
    return int(value)


def check_finite_array(name: str, arr: np.ndarray) -> np.ndarray:
    """Require every entry finite. Used on factor matrices after updates."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).reshape(-1))[0])
        raise ConfigurationError(f"{name} contains a non-finite entry at flat index {bad}")
    return arr


def check_is_fitted(model, attribute: str) -> None:
    """Raise NotFittedError unless the trailing-underscore attribute exists."""
    if getattr(model, attribute, None) is None:
        raise NotFittedError(
            f"{type(model).__name__} instance is not fitted yet; call fit() first"
        )
