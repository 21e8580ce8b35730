"""Two-state charge dynamics of the NV center under visible + NIR light.

Unit conventions at every public boundary: visible power ``g`` in uW, NIR
power ``r`` in mW, rates in kHz, times in ms. Rate coefficients therefore
carry units of kHz / (uW^m mW^n) for a process with ``m`` visible and ``n``
NIR photons.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from ._validation import (
    DegeneracyError,
    DegenerateWarning,
    DomainError,
    check_column_stochastic,
    check_nonnegative,
    check_positive,
    check_probability,
    check_scalar,
)

__all__ = [
    "ChargePopulation",
    "MultiphotonRateModel",
    "SteadyStateParams",
    "NirRatePolynomial",
    "DestructivityMatrix",
    "RatioDiagnostics",
    "ionization_rate",
    "recombination_rate",
    "evolve",
    "evolution_matrix",
    "steady_state",
    "steady_state_parametric",
    "derive_params",
    "ratio_diagnostics",
    "nir_only_rate",
    "nir_equilibrium",
    "nir_equilibrium_curve",
    "nir_equilibrium_band",
    "VISIBLE_RANGE_UW",
    "NIR_RANGE_MW",
]

# Power ranges covered by the fitted models; outside them results are extrapolations.
VISIBLE_RANGE_UW = (0.0, 50.0)
NIR_RANGE_MW = (0.0, 100.0)

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ChargePopulation:
    """Occupation probabilities of NV- (``p_minus``) and NV0 (``p_zero``)."""

    p_minus: float
    p_zero: float

    def __post_init__(self):
        check_probability(self.p_minus, "p_minus")
        check_probability(self.p_zero, "p_zero")
        if abs(self.p_minus + self.p_zero - 1.0) > _SUM_TOL:
            raise DomainError(
                f"populations must sum to 1, got {self.p_minus} + {self.p_zero}")

    @classmethod
    def from_minus(cls, p_minus):
        """Build from the NV- probability alone, clipping round-off into [0, 1]."""
        p = float(p_minus)
        if -1e-9 < p < 0.0:
            p = 0.0
        elif 1.0 < p < 1.0 + 1e-9:
            p = 1.0
        return cls(p, 1.0 - p)

    def as_array(self):
        return np.array([self.p_minus, self.p_zero])


@dataclass(frozen=True)
class MultiphotonRateModel:
    """Phenomenological multiphoton ionization/recombination coefficients.

    Ionization: ``c20 g^2 + c11 g r + c12 g r^2``.
    Recombination: ``d20 g^2 + d11 g r``.
    """

    c20: float
    c11: float
    c12: float
    d20: float
    d11: float

    def __post_init__(self):
        for name in ("c20", "c11", "c12", "d20", "d11"):
            check_nonnegative(getattr(self, name), name)


@dataclass(frozen=True)
class SteadyStateParams:
    """Reduced parameters of the rational steady-state curve p-(R).

    ``alpha`` and ``delta`` in 1/mW, ``beta`` in 1/mW^2, ``gamma`` a probability.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self):
        check_nonnegative(self.alpha, "alpha")
        check_nonnegative(self.beta, "beta")
        check_nonnegative(self.delta, "delta")
        check_probability(self.gamma, "gamma")


@dataclass(frozen=True)
class NirRatePolynomial:
    """NIR-only charge-transition rate ``a r^3 + b r^2 + c`` (kHz, r in mW)."""

    a: float
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        for name in ("a", "b", "c"):
            check_scalar(getattr(self, name), name)
        lo, hi = NIR_RANGE_MW
        # cubic extrema are at r = 0 and r = -2b/(3a); check those plus the range ends
        pts = [lo, hi]
        if self.a != 0.0:
            r_crit = -2.0 * self.b / (3.0 * self.a)
            if lo < r_crit < hi:
                pts.append(r_crit)
        if min(self.a * r**3 + self.b * r**2 + self.c for r in pts) < 0.0:
            raise DomainError("NIR rate polynomial is negative inside [0, 100] mW")

    def __call__(self, r):
        return nir_only_rate(self, r)


@dataclass(frozen=True, eq=False)
class DestructivityMatrix:
    """Charge back-action of one destructive readout.

    ``matrix[i, j]`` is P(final charge i | initial charge j), with index 0 for
    NV- and 1 for NV0. Columns sum to one.
    """

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.shape != (2, 2):
            raise DomainError(f"destructivity matrix must be 2x2, got {M.shape}")
        check_column_stochastic(M, "destructivity matrix")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls):
        return cls(np.eye(2))

    def __eq__(self, other):
        return isinstance(other, DestructivityMatrix) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True)
class RatioDiagnostics:
    """Coefficient ratios recoverable from fitted steady-state parameters.

    ``d20_over_c20`` follows directly from gamma. ``unbounded`` is set when
    ``d11_over_c11`` is infinite (the C11 -> 0 limit).
    """

    d11_over_c11: float
    c12_over_d11: float
    d20_over_c20: float
    unbounded: bool


def _check_powers(g, r):
    return check_nonnegative(g, "g"), check_nonnegative(r, "r")


def ionization_rate(model, g, r):
    """NV- -> NV0 rate in kHz for visible power ``g`` (uW) and NIR power ``r`` (mW)."""
    g, r = _check_powers(g, r)
    return model.c20 * g * g + model.c11 * g * r + model.c12 * g * r * r


def recombination_rate(model, g, r):
    """NV0 -> NV- rate in kHz; every process needs at least one visible photon."""
    g, r = _check_powers(g, r)
    return model.d20 * g * g + model.d11 * g * r


def evolve(p0, gamma_ion, gamma_rec, t):
    """Propagate a charge population for ``t`` ms under constant rates (kHz).

    Uses the closed-form solution of the two-state master equation. With both
    rates zero the population is returned unchanged.
    """
    gamma_ion = check_nonnegative(gamma_ion, "gamma_ion")
    gamma_rec = check_nonnegative(gamma_rec, "gamma_rec")
    t = check_nonnegative(t, "t")
    total = gamma_ion + gamma_rec
    if total == 0.0 or t == 0.0:
        return p0
    p_ss = gamma_rec / total
    decay = math.exp(-total * t)
    return ChargePopulation.from_minus(p_ss + (p0.p_minus - p_ss) * decay)


def evolution_matrix(gamma_ion, gamma_rec, t):
    """2x2 column-stochastic propagator equivalent to :func:`evolve`."""
    cols = [evolve(ChargePopulation(1.0, 0.0), gamma_ion, gamma_rec, t),
            evolve(ChargePopulation(0.0, 1.0), gamma_ion, gamma_rec, t)]
    return np.array([[c.p_minus for c in cols], [c.p_zero for c in cols]])


def steady_state(model, g, r):
    """Steady-state charge population under visible + NIR illumination."""
    k_ion = ionization_rate(model, g, r)
    k_rec = recombination_rate(model, g, r)
    if k_ion + k_rec == 0.0:
        raise DegeneracyError("steady state undefined: both rates vanish")
    return ChargePopulation.from_minus(k_rec / (k_ion + k_rec))


def steady_state_parametric(params, r):
    """p-(r) = gamma (1 + alpha r) / (1 + delta r + beta r^2)."""
    r = check_nonnegative(r, "r")
    den = 1.0 + params.delta * r + params.beta * r * r
    if den <= 0.0:
        raise DomainError(f"denominator {den} <= 0: invalid steady-state parameters")
    return params.gamma * (1.0 + params.alpha * r) / den


def derive_params(model, g):
    """Map rate coefficients at visible power ``g`` to (alpha, beta, gamma, delta).

    alpha, beta and delta scale as 1/g; gamma is independent of g.
    """
    g = check_nonnegative(g, "g")
    if g == 0.0:
        raise DomainError("derive_params needs g > 0")
    if model.d20 == 0.0 and model.d11 > 0.0:
        raise DomainError("alpha is unbounded when d20 = 0 and d11 > 0")
    s20 = model.c20 + model.d20
    if s20 == 0.0:
        raise DomainError("c20 + d20 must be positive")
    alpha = model.d11 / (model.d20 * g) if model.d11 > 0.0 else 0.0
    return SteadyStateParams(
        alpha=alpha,
        beta=model.c12 / (s20 * g),
        gamma=model.d20 / s20,
        delta=(model.c11 + model.d11) / (s20 * g),
    )


def ratio_diagnostics(params):
    """Recover D11/C11, C12/D11 and D20/C20 from steady-state parameters.

    Uses alpha/delta = [D11 / (D11 + C11)] / gamma and beta/alpha = (C12/D11) gamma.
    """
    a, b, g, d = params.alpha, params.beta, params.gamma, params.delta
    if g == 0.0 or d == 0.0 or a == 0.0:
        raise DegeneracyError("ratio diagnostics need alpha, gamma and delta > 0")
    q = a * g / d  # D11 / (D11 + C11)
    if q > 1.0 + 1e-12:
        raise DomainError(f"alpha*gamma/delta = {q} > 1 is inconsistent with C11 >= 0")
    unbounded = q >= 1.0
    d11_c11 = math.inf if unbounded else q / (1.0 - q)
    d20_c20 = math.inf if g == 1.0 else g / (1.0 - g)
    return RatioDiagnostics(
        d11_over_c11=d11_c11,
        c12_over_d11=(b / a) / g,
        d20_over_c20=d20_c20,
        unbounded=unbounded,
    )


def nir_only_rate(poly, r):
    r = check_nonnegative(r, "r")
    return poly.a * r**3 + poly.b * r**2 + poly.c


def _fixed_point(A):
    # Null space of (A - I) for a 2x2 column-stochastic A: p- = A01 / (A10 + A01).
    leave_minus = A[1, 0]
    enter_minus = A[0, 1]
    total = leave_minus + enter_minus
    if total <= 1e-15:
        raise DegeneracyError("eigenvalue-1 eigenvector is not unique (M.D is the identity)")
    return ChargePopulation.from_minus(enter_minus / total)


def nir_equilibrium(poly_ion, poly_rec, r, d, t_interact=10.0):
    """Fixed point of one NIR-illumination + destructive-readout cycle.

    The propagator ``M(r)`` integrates the NIR-only rates over ``t_interact``
    ms; the measured population is the normalized eigenvector of ``M(r) D``
    with eigenvalue one.
    """
    t_interact = check_positive(t_interact, "t_interact")
    M = evolution_matrix(nir_only_rate(poly_ion, r), nir_only_rate(poly_rec, r), t_interact)
    return _fixed_point(M @ d.matrix)


def nir_equilibrium_curve(poly_ion, poly_rec, r_values, d, t_interact=10.0):
    """Equilibrium p- over a sweep of NIR powers; returns an array."""
    return np.array([nir_equilibrium(poly_ion, poly_rec, r, d, t_interact).p_minus
                     for r in np.asarray(r_values, dtype=float)])


def nir_equilibrium_band(poly_ion, poly_rec, sigma_ion, sigma_rec, r_values, d,
                         t_interact=10.0, level=0.95, n_draws=2000, seed=0):
    """Confidence band of the equilibrium curve under polynomial-coefficient uncertainty.

    Coefficients are drawn independently from normal distributions with the
    given standard errors (``sigma_*`` are ``NirRatePolynomial``-shaped),
    truncated at zero. Returns ``(lower, median, upper)`` arrays.
    """
    rng = np.random.default_rng(seed)
    r_values = np.asarray(r_values, dtype=float)
    curves = np.empty((n_draws, r_values.size))
    for k in range(n_draws):
        ion = NirRatePolynomial(*(max(0.0, rng.normal(m, s)) for m, s in
                                  zip((poly_ion.a, poly_ion.b, poly_ion.c),
                                      (sigma_ion.a, sigma_ion.b, sigma_ion.c))))
        rec = NirRatePolynomial(*(max(0.0, rng.normal(m, s)) for m, s in
                                  zip((poly_rec.a, poly_rec.b, poly_rec.c),
                                      (sigma_rec.a, sigma_rec.b, sigma_rec.c))))
        try:
            curves[k] = nir_equilibrium_curve(ion, rec, r_values, d, t_interact)
        except DegeneracyError:
            curves[k] = np.nan
    tail = 50.0 * (1.0 - level)
    if np.isnan(curves).any():
        warnings.warn("some draws were degenerate and were dropped", DegenerateWarning)
    lower, median, upper = np.nanpercentile(curves, [tail, 50.0, 100.0 - tail], axis=0)
    return lower, median, upper
