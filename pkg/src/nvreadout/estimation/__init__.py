"""Parameter recovery from measured or simulated data.

The functional API below wraps the estimator classes: each ``fit_*`` takes
row-oriented data (tuples of numbers) and returns a :class:`FitResult`.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats

from .._validation import DomainError, check_count, check_positive
from .estimators import (
    ExponentialDecayRegressor,
    PoissonMixtureEM,
    RatePolynomialRegressor,
    SccJointRegressor,
    SteadyStateRegressor,
    scc_curve,
)
from .results import Z65, Z95, FitResult, covariance_from_jacobian

__all__ = [
    "FitResult",
    "Z65",
    "Z95",
    "covariance_from_jacobian",
    "RatePolynomialRegressor",
    "SteadyStateRegressor",
    "ExponentialDecayRegressor",
    "SccJointRegressor",
    "PoissonMixtureEM",
    "RateEstimate",
    "scc_curve",
    "fit_rate_polynomial",
    "fit_steady_state",
    "fit_poisson_mixture",
    "fit_exponential",
    "fit_scc_joint",
    "rate_from_transitions",
]


def _rows(data, width, name):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in width:
        raise DomainError(f"{name}: expected rows of {' or '.join(map(str, width))} values")
    return arr


def _split(arr):
    sigma = arr[:, 2] if arr.shape[1] == 3 else None
    return arr[:, 0], arr[:, 1], sigma


def fit_rate_polynomial(data, include_quadratic=True):
    """Fit ``a R^3 + b R^2 + c`` to rows of (power mW, rate kHz, error kHz)."""
    x, y, s = _split(_rows(data, (2, 3), "rate data"))
    return RatePolynomialRegressor(include_quadratic).fit(x, y, s).fit_result_


def fit_steady_state(data):
    """Fit (alpha, beta, gamma, delta) to rows of (NIR power mW, p_minus[, error])."""
    x, y, s = _split(_rows(data, (2, 3), "steady-state data"))
    return SteadyStateRegressor().fit(x, y, s).fit_result_


def fit_poisson_mixture(histogram):
    """EM fit of (eta_zero, eta_minus, weight_minus) to occurrences indexed by photon count."""
    return PoissonMixtureEM().fit_histogram(histogram).fit_result_


def fit_exponential(data):
    """Fit (amplitude, lifetime, offset) to rows of (delay ns, value[, error])."""
    x, y, s = _split(_rows(data, (2, 3), "decay data"))
    return ExponentialDecayRegressor().fit(x, y, s).fit_result_


def fit_scc_joint(dataset_ms0, dataset_ms1=None, *, p_ion=0.005, n_shots=None, fixed=None):
    """Joint SCC fit to rows of (n cycles, NV- population[, error]) for each spin.

    Passing ``dataset_ms1=None`` fits the ms=0 data alone. ``fixed`` maps
    parameter names to values held constant.
    """
    X, y, s = [], [], []
    for spin, data in ((0, dataset_ms0), (1, dataset_ms1)):
        if data is None:
            continue
        arr = _rows(data, (2, 3), "SCC data")
        X.append(np.column_stack([np.full(len(arr), spin), arr[:, 0]]))
        y.append(arr[:, 1])
        s.append(arr[:, 2] if arr.shape[1] == 3 else np.full(len(arr), np.nan))
    if not X:
        raise DomainError("no SCC data supplied")
    sigma = np.concatenate(s)
    sigma = None if np.all(np.isnan(sigma)) else sigma
    if sigma is not None and np.any(np.isnan(sigma)):
        raise DomainError("errors must be given for all datasets or none")
    est = SccJointRegressor(p_ion=p_ion, fixed=fixed)
    return est.fit(np.vstack(X), np.concatenate(y), sigma=sigma, n_shots=n_shots).fit_result_


@dataclass(frozen=True)
class RateEstimate:
    """Transition rate (kHz) with its standard error and, for zero events, a 95% upper bound."""

    rate: float
    error: float
    upper_bound: float = None


def rate_from_transitions(n_transitions, n_trials, pulse_duration, *, log_correction=False):
    """Rate from the fraction of trials that switched charge during a pulse of ``pulse_duration`` ms.

    The default is ``p / duration``. ``log_correction=True`` uses
    ``-ln(1 - p) / duration``, which stays unbiased when ``p`` is not small.
    """
    k = check_count(n_transitions, "n_transitions")
    n = check_count(n_trials, "n_trials", minimum=1)
    tau = check_positive(pulse_duration, "pulse_duration")
    if k > n:
        raise DomainError("n_transitions exceeds n_trials")
    p = k / n
    sd = math.sqrt(p * (1.0 - p) / n)
    if log_correction:
        if p >= 1.0:
            raise DomainError("every trial switched; the corrected rate is unbounded")
        rate = -math.log1p(-p) / tau
        error = sd / (1.0 - p) / tau
    else:
        rate = p / tau
        error = sd / tau
    upper = None
    if k == 0:
        # one-sided 95% Clopper-Pearson bound on p
        p_up = float(stats.beta.ppf(0.95, 1, n))
        upper = (-math.log1p(-p_up) if log_correction else p_up) / tau
    return RateEstimate(rate, error, upper)
