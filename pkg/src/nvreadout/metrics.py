"""Spin-readout figures of merit.

SNR values are signed: positive when ms=0 is the brighter (more NV-) state.
Comparison tables report magnitudes.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from ._validation import (
    DegenerateWarning,
    DomainError,
    check_nonnegative,
    check_scalar,
)

__all__ = [
    "SignalMoments",
    "snr_threshold",
    "spin_fidelity",
    "signal_moments",
    "snr_single_shot",
    "snr_pl",
    "spin_readout_signal",
    "spin_readout_noise",
    "snr_from_sigma",
    "sigma_from_snr",
    "fidelity_to_sigma",
    "TechniqueRecord",
    "ComparisonRow",
    "comparison_table",
]


@dataclass(frozen=True)
class SignalMoments:
    """Mean photon counts and count variances for the two spin preparations."""

    alpha0: float
    alpha1: float
    var0: float
    var1: float

    def __post_init__(self):
        if self.var0 < 0.0 or self.var1 < 0.0:
            raise DomainError("variances must be non-negative")


def snr_threshold(eff):
    """Differential SNR of an ideal (noise-free) charge readout after SCC.

    ``(beta0 - beta1) / sqrt(beta0 (1 - beta0) + beta1 (1 - beta1))``. The
    0/0 case (equal betas at 0 or 1) returns 0 with a :class:`DegenerateWarning`.
    """
    b0, b1 = eff.beta0, eff.beta1
    var = b0 * (1.0 - b0) + b1 * (1.0 - b1)
    if var == 0.0:
        if b0 != b1:
            return math.copysign(math.inf, b0 - b1)
        warnings.warn("snr_threshold: beta0 = beta1 in {0, 1}; returning 0", DegenerateWarning)
        return 0.0
    return (b0 - b1) / math.sqrt(var)


def spin_fidelity(eff):
    """Single-shot spin readout fidelity ``(1 + beta0 - beta1) / 2``."""
    return 0.5 * (1.0 + eff.beta0 - eff.beta1)


def signal_moments(eff, eta_zero, eta_minus):
    """First two moments of the photon count for each spin preparation."""
    eta_zero = check_nonnegative(eta_zero, "eta_zero")
    eta_minus = check_nonnegative(eta_minus, "eta_minus")
    out = []
    for beta in (eff.beta0, eff.beta1):
        mean = beta * eta_minus + (1.0 - beta) * eta_zero
        second = (1.0 - beta) * (eta_zero**2 + eta_zero) + beta * (eta_minus**2 + eta_minus)
        out.append((mean, max(second - mean * mean, 0.0)))
    (a0, v0), (a1, v1) = out
    return SignalMoments(a0, a1, v0, v1)


def snr_single_shot(eff, eta_zero, eta_minus):
    """Single-shot SNR including photon shot noise of the charge readout."""
    m = signal_moments(eff, eta_zero, eta_minus)
    var = m.var0 + m.var1
    if var == 0.0:
        return 0.0
    return (m.alpha0 - m.alpha1) / math.sqrt(var)


def snr_pl(alpha0, alpha1):
    """Single-shot SNR of conventional photoluminescence readout (Poisson counts)."""
    alpha0 = check_nonnegative(alpha0, "alpha0")
    alpha1 = check_nonnegative(alpha1, "alpha1")
    if alpha0 + alpha1 == 0.0:
        return 0.0
    return (alpha0 - alpha1) / math.sqrt(alpha0 + alpha1)


def spin_readout_signal(eff, theta):
    """Mean thresholded signal for a spin with ms=0 population cos^2(theta/2)."""
    return math.cos(theta / 2.0) ** 2 * eff.beta0 + math.sin(theta / 2.0) ** 2 * eff.beta1


def spin_readout_noise(eff, theta):
    """Spin readout noise sigma_R(theta) in units of the standard quantum limit.

    Returns ``math.inf`` where the signal slope vanishes (theta = 0 or pi, or
    beta0 = beta1).
    """
    theta = check_scalar(theta, "theta")
    b0, b1 = eff.beta0, eff.beta1
    c = math.cos(theta)
    var4 = (2.0 - b0 - b1 - (b0 - b1) * c) * (b0 + b1 + (b0 - b1) * c)
    slope = abs(b1 - b0) * abs(math.sin(theta))
    if slope < 1e-15:
        return math.inf
    return math.sqrt(max(var4, 0.0)) / slope


def snr_from_sigma(sigma_r):
    """Differential SNR equivalent to a spin readout noise ``sigma_r`` (> 1)."""
    sigma_r = check_scalar(sigma_r, "sigma_r", lower=1.0, lower_inclusive=False, allow_inf=True)
    if math.isinf(sigma_r):
        return 0.0
    return math.sqrt(2.0) / math.sqrt(sigma_r * sigma_r - 1.0)


def sigma_from_snr(snr):
    """Spin readout noise equivalent to a differential SNR: sqrt(1 + 2/SNR^2).

    An infinite SNR (perfect readout) maps to the quantum limit, 1.
    """
    snr = check_scalar(snr, "snr", allow_inf=True)
    if math.isinf(snr):
        return 1.0
    if snr == 0.0:
        return math.inf
    return math.sqrt(1.0 + 2.0 / (snr * snr))


def fidelity_to_sigma(fidelity):
    """Convert the magnetometry 'fidelity' F = 1/sigma_R (not the spin fidelity) to sigma_R."""
    fidelity = check_scalar(fidelity, "fidelity", lower=0.0, upper=1.0, lower_inclusive=False)
    return 1.0 / fidelity


@dataclass(frozen=True)
class TechniqueRecord:
    """Published figures for one readout technique.

    Exactly one PL metric (``pl_snr``, ``pl_sigma_r``, ``pl_fidelity`` or
    ``pl_alphas``) and one enhanced metric (``snr``, ``sigma_r``,
    ``fidelity`` or ``betas``) are used, in that order of preference.
    ``saturation_kcps`` and ``requirements`` pass through untouched.
    """

    name: str
    snr: float = None
    sigma_r: float = None
    fidelity: float = None
    betas: tuple = None
    pl_snr: float = None
    pl_sigma_r: float = None
    pl_fidelity: float = None
    pl_alphas: tuple = None
    saturation_kcps: float = None
    requirements: str = ""

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown technique fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("betas", "pl_alphas"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    snr: float
    pl_snr: float
    gain: float
    saturation_kcps: float
    requirements: str


def _enhanced_snr(rec):
    from .scc import SccEfficiency

    if rec.snr is not None:
        return abs(rec.snr)
    if rec.sigma_r is not None:
        return snr_from_sigma(rec.sigma_r)
    if rec.fidelity is not None:
        return snr_from_sigma(fidelity_to_sigma(rec.fidelity))
    if rec.betas is not None:
        return abs(snr_threshold(SccEfficiency(*rec.betas)))
    raise DomainError(f"{rec.name}: no enhanced readout metric given")


def _pl_snr(rec):
    if rec.pl_snr is not None:
        return abs(rec.pl_snr)
    if rec.pl_sigma_r is not None:
        return snr_from_sigma(rec.pl_sigma_r)
    if rec.pl_fidelity is not None:
        return snr_from_sigma(fidelity_to_sigma(rec.pl_fidelity))
    if rec.pl_alphas is not None:
        return abs(snr_pl(*rec.pl_alphas))
    return float("nan")


def comparison_table(records):
    """Single-shot SNR, PL SNR and SNR gain for each technique record."""
    rows = []
    for rec in records:
        snr = _enhanced_snr(rec)
        pl = _pl_snr(rec)
        gain = snr / pl if pl and not np.isnan(pl) else float("nan")
        rows.append(ComparisonRow(rec.name, snr, pl, gain,
                                  float("nan") if rec.saturation_kcps is None else rec.saturation_kcps,
                                  rec.requirements))
    return rows
