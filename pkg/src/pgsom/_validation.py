"""Input validation helpers shared across the package."""

import numpy as np


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class NonFiniteError(ArithmeticError):
    """Raised when an estimate or parameter vector contains NaN or Inf."""


def check_finite(x, name="array"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return x


def check_vector(x, size, name="vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != size:
        raise ContractError(f"{name} must have shape ({size},), got {x.shape}")
    return x


def check_probability_vector(p, name="distribution", atol=1e-12):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-d array")
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ContractError(f"{name} must be non-negative and sum to 1 (sum={p.sum()!r})")
    return p


def check_rng(rng):
    """Accept a seed, ``None`` or a :class:`numpy.random.Generator`."""
    if isinstance(rng, np.random.Generator) or hasattr(rng, "uniform"):
        return rng
    return np.random.default_rng(rng)
