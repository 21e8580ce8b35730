"""Two-component Poisson photon statistics of a single-shot charge readout."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats

from ._validation import (
    DomainError,
    check_count,
    check_nonnegative,
    check_positive,
    check_probability,
)

__all__ = [
    "NV_MINUS",
    "NV_ZERO",
    "PoissonMixture",
    "ChargeReadoutReport",
    "poisson_support",
    "mixture_pmf",
    "classify",
    "charge_fidelity",
    "optimal_threshold",
    "post_selection_purity",
]

NV_MINUS = "NV-"
NV_ZERO = "NV0"


@dataclass(frozen=True)
class PoissonMixture:
    """Photon-count distribution ``w Pois(eta_minus) + (1 - w) Pois(eta_zero)``."""

    eta_zero: float
    eta_minus: float
    weight_minus: float = 0.5

    def __post_init__(self):
        check_nonnegative(self.eta_zero, "eta_zero")
        check_nonnegative(self.eta_minus, "eta_minus")
        check_probability(self.weight_minus, "weight_minus")

    def scaled(self, factor):
        """Means rescaled by ``factor`` (e.g. a shorter counting window)."""
        factor = check_nonnegative(factor, "factor")
        return PoissonMixture(self.eta_zero * factor, self.eta_minus * factor, self.weight_minus)


@dataclass(frozen=True)
class ChargeReadoutReport:
    threshold: int
    eps_zero: float
    eps_minus: float
    fidelity: float


def poisson_support(eta):
    """Upper count beyond which a Poisson(eta) tail carries < 1e-12 of the mass."""
    return int(math.ceil(eta + 12.0 * math.sqrt(eta) + 20.0))


def mixture_pmf(m, n):
    """Probability of detecting ``n`` photons; ``n`` may be an int or an array."""
    n_arr = np.asarray(n)
    if not np.issubdtype(n_arr.dtype, np.integer):
        if not np.all(np.mod(n_arr, 1) == 0):
            raise DomainError("photon counts must be integers")
        n_arr = n_arr.astype(int)
    if np.any(n_arr < 0):
        raise DomainError("photon counts must be >= 0")
    p = (m.weight_minus * stats.poisson.pmf(n_arr, m.eta_minus)
         + (1.0 - m.weight_minus) * stats.poisson.pmf(n_arr, m.eta_zero))
    return float(p) if np.ndim(n) == 0 else p


def classify(n, threshold, *, inclusive=False):
    """Charge label of a shot with ``n`` photons.

    NV- requires strictly more than ``threshold`` photons; ``inclusive=True``
    switches to ``n >= threshold``.
    """
    n = check_count(n, "n")
    threshold = check_count(threshold, "threshold")
    bright = n >= threshold if inclusive else n > threshold
    return NV_MINUS if bright else NV_ZERO


def charge_fidelity(m, threshold, *, inclusive=False):
    """Misclassification errors and fidelity ``1 - (eps0 + eps-)/2`` at a threshold."""
    threshold = check_count(threshold, "threshold")
    # largest count still classified as NV0
    k = threshold - 1 if inclusive else threshold
    if k < 0:
        eps_zero, eps_minus = 1.0, 0.0
    else:
        eps_zero = float(stats.poisson.sf(k, m.eta_zero))
        eps_minus = float(stats.poisson.cdf(k, m.eta_minus))
    return ChargeReadoutReport(
        threshold=threshold,
        eps_zero=eps_zero,
        eps_minus=eps_minus,
        fidelity=1.0 - (eps_zero + eps_minus) / 2.0,
    )


def optimal_threshold(m, *, inclusive=False):
    """Smallest threshold in ``[0, ceil(3 eta_minus)]`` maximizing the charge fidelity."""
    if m.eta_minus <= m.eta_zero:
        raise DomainError("classification needs eta_minus > eta_zero")
    upper = int(math.ceil(3.0 * m.eta_minus))
    ks = np.arange(0, upper + 1)
    cut = ks - 1 if inclusive else ks
    eps_zero = np.where(cut >= 0, stats.poisson.sf(cut, m.eta_zero), 1.0)
    eps_minus = np.where(cut >= 0, stats.poisson.cdf(cut, m.eta_minus), 0.0)
    fid = 1.0 - (eps_zero + eps_minus) / 2.0
    return int(ks[np.argmax(fid)])


def post_selection_purity(m, verify_window, readout_window_ref, ionization_prob_during_verify,
                          prior):
    """NV- purity after heralding on one or more photons in a short verification window.

    Parameters
    ----------
    m : PoissonMixture
        Mean counts for the reference readout window (the weight is ignored).
    verify_window, readout_window_ref : float
        Verification and reference window lengths in ms; means scale linearly.
    ionization_prob_during_verify : float
        Probability that a heralded NV- ionizes before the verification ends.
    prior : ChargePopulation
        Charge distribution entering the verification step.

    Returns
    -------
    float
        ``P(NV- | n >= 1) * (1 - ionization_prob_during_verify)``. A zero-length
        window selects every shot and returns ``prior.p_minus``.
    """
    verify_window = check_nonnegative(verify_window, "verify_window")
    readout_window_ref = check_positive(readout_window_ref, "readout_window_ref")
    p_ion = check_probability(ionization_prob_during_verify, "ionization_prob_during_verify")
    if verify_window == 0.0:
        return prior.p_minus
    scale = verify_window / readout_window_ref
    herald_minus = -math.expm1(-m.eta_minus * scale)
    herald_zero = -math.expm1(-m.eta_zero * scale)
    num = prior.p_minus * herald_minus
    den = num + prior.p_zero * herald_zero
    if den == 0.0:
        return prior.p_minus
    return num / den * (1.0 - p_ion)
