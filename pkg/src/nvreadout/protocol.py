"""Time-averaged readout planning: count rates, integration time and SCC speedup.

Readout power is tied to the readout time through ``P/P_sat = sqrt(tau_r0 / tau_read)``
so that the quadratic-in-power ionization rate stays below ``1/tau_read``.

Times in this module are in microseconds unless a name says otherwise;
count rates are in kcps (counts per ms).
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize

from .metrics import snr_pl, snr_single_shot
from ._validation import DomainError, NumericalError, check_nonnegative, check_positive

__all__ = [
    "CountRateModel",
    "TimingBudget",
    "ReadoutOptimum",
    "SpeedupPoint",
    "SATURATION_FORMS",
    "scaled_power",
    "count_rates",
    "expected_counts",
    "calibrate_bg_slope",
    "calibrate_tau_r0",
    "total_time",
    "optimize_readout",
    "speedup",
    "speedup_sweep",
    "TAU_READ_BOUNDS_US",
]

# "standard": bright rate c*Gamma_sat * x/(1+x); "printed": c*Gamma_sat / (1+x).
# Only the standard form reproduces the 3 ms calibration (eta- ~ 10, tau_r0 = 550 ns).
SATURATION_FORMS = ("standard", "printed")

TAU_READ_BOUNDS_US = (0.1, 1.0e5)
_GRID_POINTS = 200


@dataclass(frozen=True)
class CountRateModel:
    """Photon collection model for the bright (NV-) and dark (NV0) charge states.

    Attributes
    ----------
    collection_efficiency : float
        Fraction of emitted photons detected.
    gamma_sat : float
        Maximum NV- emission rate, MHz.
    bg_slope : float
        NV0 count rate per unit scaled power, kcps.
    dark_rate : float
        Detector dark counts, Hz.
    tau_r0 : float
        Readout time at which the scaled power reaches one, ns.
    saturation_form : str
        One of :data:`SATURATION_FORMS`.
    """

    collection_efficiency: float = 0.005
    gamma_sat: float = 50.0
    bg_slope: float = 9.601136296387955
    dark_rate: float = 20.0
    tau_r0: float = 550.0
    saturation_form: str = "standard"

    def __post_init__(self):
        for name in ("collection_efficiency", "gamma_sat", "bg_slope", "dark_rate", "tau_r0"):
            check_positive(getattr(self, name), name)
        if self.saturation_form not in SATURATION_FORMS:
            raise DomainError(f"saturation_form must be one of {SATURATION_FORMS}")

    @property
    def saturated_rate_kcps(self):
        return self.collection_efficiency * self.gamma_sat * 1e3


@dataclass(frozen=True)
class TimingBudget:
    """Initialization, spin-operation and readout durations in us."""

    tau_init: float
    tau_op: float
    tau_read: float

    def __post_init__(self):
        for name in ("tau_init", "tau_op", "tau_read"):
            check_nonnegative(getattr(self, name), name)

    @property
    def cycle(self):
        return self.tau_init + self.tau_op + self.tau_read


@dataclass(frozen=True)
class ReadoutOptimum:
    tau_read: float  # us
    total_time: float  # s
    snr: float
    multimodal: bool


@dataclass(frozen=True)
class SpeedupPoint:
    tau_op: float  # us
    tau_read_opt: float  # us
    snr_ss: float
    total_time: float  # s, SCC
    speedup: float


def scaled_power(model, tau_read):
    """Readout power relative to saturation for a readout of ``tau_read`` us."""
    tau_read = check_positive(tau_read, "tau_read")
    return math.sqrt(model.tau_r0 * 1e-3 / tau_read)


def count_rates(model, tau_read):
    """(gamma_minus, gamma_zero) in kcps for a readout of ``tau_read`` us."""
    x = scaled_power(model, tau_read)
    if model.saturation_form == "standard":
        sat = x / (1.0 + x)
    else:
        sat = 1.0 / (1.0 + x)
    dark = model.dark_rate * 1e-3
    return model.saturated_rate_kcps * sat + dark, model.bg_slope * x + dark


def expected_counts(model, tau_read):
    """Mean photon numbers (eta_zero, eta_minus) for a readout of ``tau_read`` us."""
    tau_read = check_nonnegative(tau_read, "tau_read")
    if tau_read == 0.0:
        return 0.0, 0.0
    g_minus, g_zero = count_rates(model, tau_read)
    tau_ms = tau_read * 1e-3
    return g_zero * tau_ms, g_minus * tau_ms


def calibrate_bg_slope(model, tau_read, gamma_zero):
    """NV0 background slope (kcps) that yields a total dark-state rate ``gamma_zero`` (kcps)."""
    x = scaled_power(model, tau_read)
    slope = (gamma_zero - model.dark_rate * 1e-3) / x
    if slope <= 0.0:
        raise DomainError("measured NV0 rate does not exceed the detector dark rate")
    return slope


def calibrate_tau_r0(model, tau_read, gamma_minus):
    """tau_r0 (ns) from a bright-state rate ``gamma_minus`` (kcps) measured at ``tau_read`` us.

    Only defined for the standard saturation form.
    """
    if model.saturation_form != "standard":
        raise DomainError("tau_r0 calibration requires the standard saturation form")
    frac = (gamma_minus - model.dark_rate * 1e-3) / model.saturated_rate_kcps
    if not 0.0 < frac < 1.0:
        raise DomainError("bright rate must lie between the dark rate and saturation")
    x = frac / (1.0 - frac)
    return x * x * tau_read * 1e3


def total_time(budget, snr_single_shot):
    """Integration time (s) to reach a time-averaged SNR of one."""
    if snr_single_shot <= 0.0:
        raise DomainError("single-shot SNR must be > 0")
    return budget.cycle * 1e-6 / snr_single_shot**2


def _scc_snr(eff, model, tau_read):
    eta_zero, eta_minus = expected_counts(model, tau_read)
    return snr_single_shot(eff, eta_zero, eta_minus)


def _scc_total_time(eff, model, tau_init, tau_op, tau_read):
    snr = _scc_snr(eff, model, tau_read)
    if snr <= 0.0:
        return math.inf
    return (tau_init + tau_op + tau_read) * 1e-6 / snr**2


def optimize_readout(eff, model, tau_init, tau_op, bounds=TAU_READ_BOUNDS_US):
    """Readout time minimizing the SCC integration time for a given operation time.

    A 200-point log grid over ``bounds`` (us) locates the basin; golden-section
    search in log(tau) refines it. If the grid shows more than one local
    minimum the global grid basin is refined and ``multimodal`` is set.
    """
    tau_init = check_nonnegative(tau_init, "tau_init")
    tau_op = check_nonnegative(tau_op, "tau_op")
    lo, hi = bounds
    grid = np.geomspace(lo, hi, _GRID_POINTS)
    values = np.array([_scc_total_time(eff, model, tau_init, tau_op, t) for t in grid])
    if not np.any(np.isfinite(values)):
        raise NumericalError("SCC SNR is non-positive over the whole readout range")
    i = int(np.argmin(values))
    interior = np.r_[False, (values[1:-1] < values[:-2]) & (values[1:-1] <= values[2:]), False]
    multimodal = int(interior.sum()) > 1

    def objective(log_tau):
        return _scc_total_time(eff, model, tau_init, tau_op, math.exp(log_tau))

    log_grid = np.log(grid)
    if 0 < i < len(grid) - 1:
        res = optimize.minimize_scalar(
            objective, bracket=(log_grid[i - 1], log_grid[i], log_grid[i + 1]),
            method="golden", tol=1e-8)
        log_best = float(res.x) if res.fun <= values[i] else log_grid[i]
    else:
        log_best = log_grid[i]
    tau_best = float(np.clip(math.exp(log_best), lo, hi))
    return ReadoutOptimum(
        tau_read=tau_best,
        total_time=_scc_total_time(eff, model, tau_init, tau_op, tau_best),
        snr=_scc_snr(eff, model, tau_best),
        multimodal=multimodal,
    )


def _pl_total_time(pl_alpha0, pl_alpha1, pl_tau_read, tau_init, tau_op):
    snr = snr_pl(pl_alpha0, pl_alpha1)
    return total_time(TimingBudget(tau_init, tau_op, pl_tau_read), abs(snr))


def speedup(eff, model, pl_alpha0, pl_alpha1, pl_tau_read, tau_init, tau_op):
    """T_PL / T_SCC with the SCC readout time optimized at this operation time."""
    t_pl = _pl_total_time(pl_alpha0, pl_alpha1, pl_tau_read, tau_init, tau_op)
    return t_pl / optimize_readout(eff, model, tau_init, tau_op).total_time


def speedup_sweep(eff, model, tau_ops, pl_alpha0=0.05, pl_alpha1=0.035, pl_tau_read=0.2,
                  tau_init=1.0):
    """Speedup and optimal readout time for each operation time in ``tau_ops`` (us)."""
    out = []
    for tau_op in np.asarray(tau_ops, dtype=float):
        opt = optimize_readout(eff, model, tau_init, tau_op)
        t_pl = _pl_total_time(pl_alpha0, pl_alpha1, pl_tau_read, tau_init, tau_op)
        out.append(SpeedupPoint(float(tau_op), opt.tau_read, opt.snr, opt.total_time,
                                t_pl / opt.total_time))
    return out
