"""Estimators with a scikit-learn interface (fit / predict / score / get_params).

Regressors take the independent variable as ``X`` (a 1-D array or a single
column) and accept optional per-point standard errors through ``sigma``.
When ``sigma`` is given the covariance uses it as absolute; otherwise it is
scaled by the reduced chi-square of the fit.
"""

import itertools
import math

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..charge import SteadyStateParams
from ..photon import PoissonMixture
from ..scc import MS0, MS1, SccParams, cycle_matrix
from .._validation import DomainError
from ._lm import levenberg_marquardt
from .results import FitResult, covariance_from_jacobian

__all__ = [
    "RatePolynomialRegressor",
    "SteadyStateRegressor",
    "ExponentialDecayRegressor",
    "SccJointRegressor",
    "PoissonMixtureEM",
]


def _column(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise DomainError(f"{name} must have a single column, got shape {X.shape}")
        X = X[:, 0]
    if X.ndim != 1:
        raise DomainError(f"{name} must be 1-D")
    if not np.all(np.isfinite(X)):
        raise DomainError(f"{name} contains non-finite values")
    return X


def _xy_sigma(X, y, sigma):
    x = _column(X)
    y = _column(y, "y")
    if x.size != y.size:
        raise DomainError(f"X and y lengths differ ({x.size} vs {y.size})")
    if sigma is not None:
        sigma = _column(sigma, "sigma")
        if sigma.size != y.size:
            raise DomainError("sigma must match y")
        if np.any(sigma <= 0):
            raise DomainError("sigma must be > 0")
    return x, y, sigma


def _r2(y, yhat, sigma):
    w = np.ones_like(y) if sigma is None else 1.0 / sigma**2
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * (y - yhat) ** 2)
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("nan")
    return 1.0 - ss_res / ss_tot


class RatePolynomialRegressor(RegressorMixin, BaseEstimator):
    """Weighted linear least squares for ``rate = a r^3 + b r^2 + c``.

    Parameters
    ----------
    include_quadratic : bool, default=True
        When False the quadratic coefficient is fixed to zero.
    """

    def __init__(self, include_quadratic=True):
        self.include_quadratic = include_quadratic

    def _design(self, r):
        cols = [r**3, r**2, np.ones_like(r)] if self.include_quadratic else [r**3, np.ones_like(r)]
        return np.column_stack(cols)

    def fit(self, X, y, sigma=None):
        r, rate, sigma = _xy_sigma(X, y, sigma)
        D = self._design(r)
        if r.size < D.shape[1]:
            raise DomainError("not enough points for the polynomial fit")
        w = np.ones_like(rate) if sigma is None else 1.0 / sigma
        Dw = D * w[:, None]
        coef, *_ = np.linalg.lstsq(Dw, rate * w, rcond=None)
        resid = (rate - D @ coef) * w
        cov = covariance_from_jacobian(Dw, resid, absolute_sigma=sigma is not None)
        if self.include_quadratic:
            names, full, full_cov = ("a", "b", "c"), coef, cov
        else:
            full = np.array([coef[0], 0.0, coef[1]])
            full_cov = np.zeros((3, 3))
            full_cov[np.ix_([0, 2], [0, 2])] = cov
            names = ("a", "b", "c")
        self.coef_ = full
        self.fit_result_ = FitResult(
            names=names, values=full, covariance=full_cov,
            r2=_r2(rate, D @ coef, sigma),
            units={"a": "kHz/mW^3", "b": "kHz/mW^2", "c": "kHz"},
            flags={"b_fixed": not self.include_quadratic},
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        r = _column(X)
        a, b, c = self.coef_
        return a * r**3 + b * r**2 + c


def _steady_curve(theta, r):
    alpha, beta, gamma, delta = theta
    return gamma * (1.0 + alpha * r) / (1.0 + delta * r + beta * r * r)


class SteadyStateRegressor(RegressorMixin, BaseEstimator):
    """Nonlinear fit of ``p-(R) = gamma (1 + alpha R) / (1 + delta R + beta R^2)``.

    Bounds: alpha, beta, delta >= 0 and gamma in [0, 1]. A small grid of
    starting points guards against local minima.
    """

    names = ("alpha", "beta", "gamma", "delta")

    def __init__(self, max_iter=500):
        self.max_iter = max_iter

    def fit(self, X, y, sigma=None):
        r, p, sigma = _xy_sigma(X, y, sigma)
        if r.size < 5:
            raise DomainError("steady-state fit is underdetermined with fewer than 5 points")
        w = np.ones_like(p) if sigma is None else 1.0 / sigma

        def residual(theta):
            return (_steady_curve(theta, r) - p) * w

        lower = np.array([0.0, 0.0, 0.0, 0.0])
        upper = np.array([np.inf, np.inf, 1.0, np.inf])
        scale = 1.0 / max(np.median(r[r > 0]) if np.any(r > 0) else 1.0, 1e-12)
        gamma0 = float(np.clip(p[np.argmin(r)], 0.01, 0.99))
        ratio0 = float(np.clip(p.max() / gamma0, 1.0, 10.0))
        best = None
        for delta0, beta_mult in itertools.product((0.1, 1.0, 10.0), (0.01, 0.1, 1.0)):
            d0 = delta0 * scale
            x0 = [d0 * ratio0, beta_mult * d0 * scale, gamma0, d0]
            res = levenberg_marquardt(residual, x0, lower, upper, max_iter=self.max_iter)
            if best is None or res.cost < best.cost:
                best = res
        cov = covariance_from_jacobian(best.jacobian, best.residuals,
                                       absolute_sigma=sigma is not None)
        self.params_ = SteadyStateParams(*best.x)
        self.fit_result_ = FitResult(
            names=self.names, values=best.x, covariance=cov,
            r2=_r2(p, _steady_curve(best.x, r), sigma),
            units={"alpha": "1/mW", "beta": "1/mW^2", "gamma": "", "delta": "1/mW"},
            flags={"converged": best.converged, "n_iter": best.n_iter},
        )
        self.cost_history_ = best.cost_history
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return _steady_curve(self.fit_result_.values, _column(X))


def _exp_curve(theta, t):
    amplitude, lifetime, offset = theta
    return amplitude * np.exp(-t / lifetime) + offset


class ExponentialDecayRegressor(RegressorMixin, BaseEstimator):
    """Fit ``amplitude * exp(-t / lifetime) + offset``.

    ``fit_result_.flags['lifetime_unidentifiable']`` is set when the
    amplitude is not resolved from zero (|A| < 2 sigma_A).
    """

    names = ("amplitude", "lifetime", "offset")

    def __init__(self, max_iter=500):
        self.max_iter = max_iter

    def fit(self, X, y, sigma=None):
        t, v, sigma = _xy_sigma(X, y, sigma)
        if t.size < 4:
            raise DomainError("exponential fit needs at least 4 points")
        w = np.ones_like(v) if sigma is None else 1.0 / sigma
        order = np.argsort(t)
        t_sorted, v_sorted = t[order], v[order]
        offset0 = float(v_sorted[-1])
        amp0 = float(v_sorted[0] - offset0)
        span = float(t_sorted[-1] - t_sorted[0]) or 1.0
        tau0 = span / 3.0
        if amp0 != 0.0:
            below = np.nonzero(np.abs(v_sorted - offset0) <= abs(amp0) / math.e)[0]
            if below.size and t_sorted[below[0]] > t_sorted[0]:
                tau0 = float(t_sorted[below[0]] - t_sorted[0])

        def residual(theta):
            return (_exp_curve(theta, t) - v) * w

        lower = np.array([-np.inf, 1e-12 * span, -np.inf])
        upper = np.full(3, np.inf)
        best = None
        for mult in (1.0, 0.3, 3.0):
            res = levenberg_marquardt(residual, [amp0, tau0 * mult, offset0], lower, upper,
                                      max_iter=self.max_iter)
            if best is None or res.cost < best.cost:
                best = res
        cov = covariance_from_jacobian(best.jacobian, best.residuals,
                                       absolute_sigma=sigma is not None)
        fit = FitResult(
            names=self.names, values=best.x, covariance=cov,
            r2=_r2(v, _exp_curve(best.x, t), sigma),
            units={"amplitude": "", "lifetime": "ns", "offset": ""},
        )
        amp, amp_err = best.x[0], fit.stderr[0]
        fit.flags = {
            "converged": best.converged,
            "lifetime_unidentifiable": bool(amp == 0.0 or not np.isfinite(fit.stderr[1])
                                            or abs(amp) < 2.0 * amp_err),
        }
        self.fit_result_ = fit
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_result_")
        return _exp_curve(self.fit_result_.values, _column(X))


_SCC_FREE = ("charge_init_nv0", "k35", "k45", "p_sing", "k51_over_k52", "spin_init")


def scc_curve(params, spins, n_cycles):
    """NV- population after ``n_cycles`` for each (spin, n) pair."""
    spins = np.asarray(spins, dtype=int)
    n_cycles = np.asarray(n_cycles, dtype=int)
    C = cycle_matrix(params)
    n_max = int(n_cycles.max()) if n_cycles.size else 0
    out = np.empty(spins.size)
    for spin in (MS0, MS1):
        sel = spins == spin
        if not np.any(sel):
            continue
        p = np.zeros(6)
        nv_minus = 1.0 - params.charge_init_nv0
        p[spin] = params.spin_init * nv_minus
        p[1 - spin] = (1.0 - params.spin_init) * nv_minus
        p[5] = params.charge_init_nv0
        trace = np.empty(n_max + 1)
        for k in range(n_max + 1):
            trace[k] = p[0] + p[1]
            p = C @ p
        out[sel] = trace[n_cycles[sel]]
    return out


class SccJointRegressor(RegressorMixin, BaseEstimator):
    """Joint fit of the six-level SCC model to both spin-preparation datasets.

    ``X`` has two columns: the prepared spin (0 for ms=0, 1 for ms=+-1) and
    the number of SCC cycles. ``y`` is the measured NV- population. The
    triplet ionization probability ``p_ion`` is held fixed; the six other
    model parameters are free unless listed in ``fixed``.

    The summed NV- signal of both preparations determines only five
    combinations of the six parameters, so one direction in parameter space
    is flat. Parameters along it get infinite standard errors and are listed
    in ``fit_result_.flags['non_identifiable']``. Fixing any one of them
    (typically ``spin_init``) restores identifiability.

    When ``sigma`` is not supplied but ``n_shots`` is, binomial standard
    errors ``sqrt(y (1 - y) / n_shots)`` are used as weights.
    """

    names = _SCC_FREE

    def __init__(self, p_ion=0.005, fixed=None, max_iter=500):
        self.p_ion = p_ion
        self.fixed = fixed
        self.max_iter = max_iter

    def _params(self, theta):
        return SccParams(p_ion=self.p_ion, **dict(zip(_SCC_FREE, theta)))

    def _check_X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise DomainError("X must have columns (spin, n_cycles)")
        spins, ns = X[:, 0], X[:, 1]
        if not np.all(np.isin(spins, (0, 1))):
            raise DomainError("spin column must contain 0 or 1")
        if np.any(ns < 0) or np.any(ns % 1 != 0):
            raise DomainError("n_cycles must be non-negative integers")
        return spins.astype(int), ns.astype(int)

    def fit(self, X, y, sigma=None, n_shots=None):
        spins, ns = self._check_X(X)
        y = _column(y, "y")
        fixed = dict(self.fixed or {})
        unknown = set(fixed) - set(_SCC_FREE)
        if unknown:
            raise DomainError(f"cannot fix unknown parameters {sorted(unknown)}")
        free = [i for i, name in enumerate(_SCC_FREE) if name not in fixed]
        binomial = sigma is None and n_shots is not None
        if binomial:
            var = np.clip(y * (1.0 - y), 1.0 / n_shots, None) / n_shots
            sigma = np.sqrt(var)
        elif sigma is not None:
            sigma = _column(sigma, "sigma")
        w = np.ones_like(y) if sigma is None else 1.0 / sigma

        def full(theta_free):
            theta = np.array([fixed.get(name, np.nan) for name in _SCC_FREE])
            theta[free] = theta_free
            return theta

        def residual(theta_free):
            return (scc_curve(self._params(full(theta_free)), spins, ns) - y) * w

        lower = np.zeros(6)[free]
        upper = np.array([1.0, 1.0, 1.0, 1.0, 100.0, 1.0])[free]
        at_zero = ns == 0
        charge0 = float(np.clip(1.0 - y[at_zero].mean(), 0.0, 0.5)) if np.any(at_zero) else 0.05
        best = None
        for k45, p_sing, ratio, spin in itertools.product((0.2, 0.5), (0.2, 0.5), (1.0, 3.0),
                                                          (0.7, 0.95)):
            x0 = np.array([charge0, 0.05, k45, p_sing, ratio, spin])[free]
            res = levenberg_marquardt(residual, x0, lower, upper, max_iter=self.max_iter)
            if best is None or res.cost < best.cost:
                best = res
        cov_free = covariance_from_jacobian(best.jacobian, best.residuals,
                                            absolute_sigma=sigma is not None)
        # An exactly flat direction shows up as a singular value ~1e-13 below
        # the rest; every parameter that moves along it is unconstrained, even
        # when the optimizer stopped at a bound where its component is small.
        _, s, vt = np.linalg.svd(best.jacobian, full_matrices=False)
        if s.size and s[-1] < 1e-8 * s[0]:
            moving = np.abs(vt[-1]) > 1e-9
            cov_free[moving, :] = np.inf
            cov_free[:, moving] = np.inf
        cov = np.zeros((6, 6))
        cov[np.ix_(free, free)] = cov_free
        values = full(best.x)
        self.params_ = self._params(values)
        fit = FitResult(
            names=self.names, values=values, covariance=cov,
            r2=_r2(y, scc_curve(self.params_, spins, ns), sigma),
        )
        fit.flags = {
            "converged": best.converged,
            "binomial_weights": binomial,
            "p_ion_fixed": self.p_ion,
            "fixed": sorted(fixed),
            "non_identifiable": [n for n, e in zip(self.names, fit.stderr) if not np.isfinite(e)],
        }
        self.fit_result_ = fit
        self.cost_ = best.cost
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        spins, ns = self._check_X(X)
        return scc_curve(self.params_, spins, ns)


def _poisson_logpmf(n, eta):
    return stats.poisson.logpmf(n, eta) if eta > 0 else np.where(n == 0, 0.0, -np.inf)


class PoissonMixtureEM(BaseEstimator):
    """Two-component Poisson mixture fitted by expectation-maximization.

    Components are labelled so that ``eta_minus >= eta_zero`` (NV- is bright).
    The bimodal split for initialization puts counts at or below the overall
    mean into the dark component.

    If the two-component fit does not improve the log-likelihood over a single
    Poisson by more than the 99.9% chi-square(2) quantile, the model collapses
    to one component: ``weight_minus = 1``, ``eta_zero = nan`` and
    ``flags['degenerate'] = True``.
    """

    names = ("eta_zero", "eta_minus", "weight_minus")

    def __init__(self, tol=1e-10, max_iter=2000):
        self.tol = tol
        self.max_iter = max_iter

    @staticmethod
    def _counts(X):
        X = np.asarray(X)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        if X.ndim != 1 or X.size == 0:
            raise DomainError("photon counts must be a non-empty 1-D array")
        if np.any(X < 0) or np.any(np.mod(X, 1) != 0):
            raise DomainError("photon counts must be non-negative integers")
        return X.astype(int)

    def fit(self, X, y=None):
        return self.fit_histogram(np.bincount(self._counts(X)))

    def fit_histogram(self, occurrences):
        h = np.asarray(occurrences, dtype=float)
        if h.ndim != 1 or np.any(h < 0) or h.sum() <= 0:
            raise DomainError("histogram must be non-negative occurrences with positive total")
        n = np.arange(h.size)
        total = h.sum()
        mean = float(h @ n / total)

        def loglik(eta0, eta1, w):
            with np.errstate(divide="ignore"):
                la = np.log(w) + _poisson_logpmf(n, eta1) if w > 0 else np.full(n.size, -np.inf)
                lb = np.log1p(-w) + _poisson_logpmf(n, eta0) if w < 1 else np.full(n.size, -np.inf)
            ll = np.logaddexp(la, lb)
            return float(h[h > 0] @ ll[h > 0]), la - ll

        above = n > mean
        mass_above = h[above].sum()
        mass_below = total - mass_above
        eta0 = float(h[~above] @ n[~above] / mass_below) if mass_below > 0 else 0.0
        eta1 = float(h[above] @ n[above] / mass_above) if mass_above > 0 else mean
        w = float(mass_above / total)
        history = []
        ll, log_resp = loglik(eta0, eta1, w)
        history.append(ll)
        converged = False
        for _ in range(self.max_iter):
            if not 0.0 < w < 1.0:
                converged = True
                break
            resp = np.exp(log_resp)
            m1 = h @ resp
            m0 = total - m1
            w = float(m1 / total)
            eta1 = float((h * resp) @ n / m1) if m1 > 0 else eta1
            eta0 = float((h * (1.0 - resp)) @ n / m0) if m0 > 0 else eta0
            ll_new, log_resp = loglik(eta0, eta1, w)
            history.append(ll_new)
            if abs(ll_new - ll) <= self.tol * max(1.0, abs(ll)):
                ll = ll_new
                converged = True
                break
            ll = ll_new
        if eta0 > eta1:
            eta0, eta1, w = eta1, eta0, 1.0 - w

        ll_single = float(h @ _poisson_logpmf(n, mean)) if mean > 0 else 0.0
        degenerate = 2.0 * (ll - ll_single) < stats.chi2.ppf(0.999, 2)
        flags = {"converged": converged, "degenerate": bool(degenerate)}
        if degenerate:
            values = np.array([np.nan, mean, 1.0])
            cov = np.full((3, 3), np.nan)
            cov[1, 1] = mean / total
            ll = ll_single
        else:
            values = np.array([eta0, eta1, w])
            cov = self._covariance(lambda th: -loglik(*th)[0], values)
        self.log_likelihood_history_ = history
        self.log_likelihood_ = ll
        self.fit_result_ = FitResult(names=self.names, values=values, covariance=cov,
                                     units={"eta_zero": "photons", "eta_minus": "photons",
                                            "weight_minus": ""},
                                     flags=flags)
        return self

    @staticmethod
    def _covariance(nll, theta):
        k = theta.size
        h = np.maximum(1e-4, 1e-4 * np.abs(theta))
        # keep the stencil inside the parameter domain
        h = np.minimum(h, 0.5 * np.abs(theta) + 1e-12)
        h[2] = min(h[2], 0.5 * theta[2], 0.5 * (1.0 - theta[2])) if 0 < theta[2] < 1 else 1e-6
        H = np.empty((k, k))
        f0 = nll(theta)
        for i in range(k):
            for j in range(i, k):
                if i == j:
                    tp = theta.copy()
                    tm = theta.copy()
                    tp[i] += h[i]
                    tm[i] -= h[i]
                    H[i, i] = (nll(tp) - 2.0 * f0 + nll(tm)) / h[i] ** 2
                else:
                    vals = []
                    for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        t = theta.copy()
                        t[i] += si * h[i]
                        t[j] += sj * h[j]
                        vals.append(nll(t))
                    H[i, j] = H[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h[i] * h[j])
        try:
            return np.linalg.inv(H)
        except np.linalg.LinAlgError:
            return np.full((k, k), np.inf)

    @property
    def mixture_(self):
        check_is_fitted(self, "fit_result_")
        eta0, eta1, w = self.fit_result_.values
        return PoissonMixture(0.0 if np.isnan(eta0) else eta0, eta1, w)

    def predict_proba(self, X):
        """Posterior probability that each shot came from NV-."""
        n = self._counts(X)
        m = self.mixture_
        with np.errstate(divide="ignore"):
            la = np.log(m.weight_minus) + _poisson_logpmf(n, m.eta_minus) if m.weight_minus > 0 \
                else np.full(n.size, -np.inf)
            lb = np.log1p(-m.weight_minus) + _poisson_logpmf(n, m.eta_zero) \
                if m.weight_minus < 1 else np.full(n.size, -np.inf)
        return np.exp(la - np.logaddexp(la, lb))

    def predict(self, X):
        """1 for shots assigned to NV-, 0 for NV0."""
        return (self.predict_proba(X) > 0.5).astype(int)

    def score(self, X, y=None):
        """Mean log-likelihood per shot."""
        n = self._counts(X)
        m = self.mixture_
        p = (m.weight_minus * stats.poisson.pmf(n, m.eta_minus)
             + (1 - m.weight_minus) * stats.poisson.pmf(n, m.eta_zero))
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(p)))
