"""Input validation helpers shared by every module."""

import math
import numbers

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the model."""


class DegeneracyError(ArithmeticError):
    """A quantity is not uniquely defined for the given inputs."""


class NumericalError(RuntimeError):
    """A numerical procedure failed or exceeded a safety cap."""


class DegenerateWarning(RuntimeWarning):
    """A result was returned for a degenerate limit (e.g. 0/0 taken as 0)."""


def check_scalar(x, name, *, lower=None, upper=None, lower_inclusive=True,
                 upper_inclusive=True, allow_inf=False):
    """Return ``x`` as a float after checking finiteness and bounds.

    Raises
    ------
    DomainError
        If ``x`` is not a real number, is NaN, or violates a bound.
    """
    if isinstance(x, bool) or not isinstance(x, (numbers.Real, np.floating, np.integer)):
        raise DomainError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x)
    if math.isnan(x) or (math.isinf(x) and not allow_inf):
        raise DomainError(f"{name} must be finite, got {x}")
    if lower is not None:
        if (x < lower) if lower_inclusive else (x <= lower):
            op = ">=" if lower_inclusive else ">"
            raise DomainError(f"{name} must be {op} {lower}, got {x}")
    if upper is not None:
        if (x > upper) if upper_inclusive else (x >= upper):
            op = "<=" if upper_inclusive else "<"
            raise DomainError(f"{name} must be {op} {upper}, got {x}")
    return x


def check_nonnegative(x, name):
    return check_scalar(x, name, lower=0.0)


def check_positive(x, name):
    return check_scalar(x, name, lower=0.0, lower_inclusive=False)


def check_probability(x, name):
    return check_scalar(x, name, lower=0.0, upper=1.0)


def check_count(n, name, *, minimum=0):
    if isinstance(n, bool) or not isinstance(n, (numbers.Integral, np.integer)):
        if isinstance(n, (float, np.floating)) and float(n).is_integer():
            n = int(n)
        else:
            raise DomainError(f"{name} must be an integer, got {n!r}")
    n = int(n)
    if n < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {n}")
    return n


def check_column_stochastic(M, name, tol=1e-12):
    """Validate that every entry of ``M`` is in [0, 1] and each column sums to one."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} has non-finite entries")
    if np.any(M < -tol) or np.any(M > 1 + tol):
        raise DomainError(f"{name} has entries outside [0, 1]")
    colsum = M.sum(axis=0)
    if np.any(np.abs(colsum - 1.0) > tol):
        raise DomainError(f"{name} columns must sum to 1, got {colsum}")
    return M
