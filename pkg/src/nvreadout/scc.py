"""Six-level population transfer model of repeated shelve-and-ionize SCC.

Level indices (0-based in arrays):

    0  ms=0 triplet ground      3  ms=+-1 triplet excited
    1  ms=+-1 triplet ground    4  metastable singlet
    2  ms=0 triplet excited     5  NV0

One SCC cycle is ``M_III @ M_II @ M_I``: excite (with a small chance of
direct ionization), let the excited triplet decay through the ISC, then
attempt to ionize the singlet and let the rest relax to the ground triplet.
"""

from dataclasses import dataclass, fields
import math

import numpy as np

from ._validation import (
    DomainError,
    check_column_stochastic,
    check_count,
    check_nonnegative,
    check_probability,
)

__all__ = [
    "SixLevelState",
    "SccParams",
    "SccEfficiency",
    "build_matrices",
    "cycle_matrix",
    "initial_state",
    "apply_cycles",
    "scc_efficiencies",
    "shelf_delay_survival",
]

N_LEVELS = 6
MS0, MS1 = 0, 1


@dataclass(frozen=True, eq=False)
class SixLevelState:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (N_LEVELS,):
            raise DomainError(f"state must have 6 entries, got shape {p.shape}")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-12:
            raise DomainError(f"invalid population vector {p}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def nv_minus(self):
        """Total NV- population (triplet ground + excited + singlet)."""
        return float(self.p[:5].sum())

    def __eq__(self, other):
        return isinstance(other, SixLevelState) and np.array_equal(self.p, other.p)


@dataclass(frozen=True)
class SccParams:
    """Branching and ionization probabilities of one SCC cycle.

    ``p_exc`` is not a free parameter: column conservation forces
    ``p_exc = 1 - p_ion``. Likewise ``k51 + k52 = 1 - p_sing`` with
    ``k51 / k52 = k51_over_k52``.
    """

    p_ion: float
    k35: float
    k45: float
    p_sing: float
    k51_over_k52: float
    spin_init: float
    charge_init_nv0: float

    def __post_init__(self):
        for name in ("p_ion", "k35", "k45", "p_sing", "spin_init", "charge_init_nv0"):
            check_probability(getattr(self, name), name)
        check_nonnegative(self.k51_over_k52, "k51_over_k52")

    @property
    def p_exc(self):
        return 1.0 - self.p_ion

    @property
    def k52(self):
        return (1.0 - self.p_sing) / (1.0 + self.k51_over_k52)

    @property
    def k51(self):
        return self.k51_over_k52 * self.k52

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SccParams(**values)


@dataclass(frozen=True)
class SccEfficiency:
    """NV- detection probabilities after SCC for ms=0 (beta0) and ms=+-1 (beta1)."""

    beta0: float
    beta1: float

    def __post_init__(self):
        check_probability(self.beta0, "beta0")
        check_probability(self.beta1, "beta1")


def _raw_matrices(p_ion, k35, k45, p_sing, k51, k52):
    p_exc = 1.0 - p_ion
    m1 = np.zeros((N_LEVELS, N_LEVELS))
    m1[2, 0] = p_exc
    m1[3, 1] = p_exc
    m1[5, 0] = p_ion
    m1[5, 1] = p_ion
    m1[5, 5] = 1.0

    m2 = np.zeros((N_LEVELS, N_LEVELS))
    m2[0, 0] = 1.0
    m2[1, 1] = 1.0
    m2[0, 2] = 1.0 - k35
    m2[1, 3] = 1.0 - k45
    m2[4, 2] = k35
    m2[4, 3] = k45
    m2[5, 5] = 1.0

    m3 = np.zeros((N_LEVELS, N_LEVELS))
    m3[0, 0] = 1.0
    m3[1, 1] = 1.0
    m3[0, 4] = k51
    m3[1, 4] = k52
    m3[5, 4] = p_sing
    m3[5, 5] = 1.0
    return m1, m2, m3


def build_matrices(params):
    """Return ``(M_I, M_II, M_III)``, each 6x6 and column-stochastic.

    Columns of the transient levels that are not fed by a step are left as
    zero in the displayed model; they are filled with the identity here so
    every matrix conserves probability on its own (the product is unchanged
    because those levels are always empty when the step is applied).
    """
    m1, m2, m3 = _raw_matrices(params.p_ion, params.k35, params.k45, params.p_sing,
                               params.k51, params.k52)
    # idle columns: levels guaranteed empty when the step is applied
    for m, idle in ((m1, (2, 3, 4)), (m2, (4,)), (m3, (2, 3))):
        for j in idle:
            m[j, j] = 1.0
    for name, m in zip(("M_I", "M_II", "M_III"), (m1, m2, m3)):
        check_column_stochastic(m, name)
    return m1, m2, m3


def cycle_matrix(params):
    m1, m2, m3 = build_matrices(params)
    return m3 @ m2 @ m1


def initial_state(params, spin):
    """Population after imperfect charge and spin initialization into ``spin`` (0 or 1)."""
    if spin not in (MS0, MS1):
        raise DomainError(f"spin must be 0 (ms=0) or 1 (ms=+-1), got {spin!r}")
    p = np.zeros(N_LEVELS)
    nv_minus = 1.0 - params.charge_init_nv0
    p[spin] = params.spin_init * nv_minus
    p[1 - spin] = (1.0 - params.spin_init) * nv_minus
    p[5] = params.charge_init_nv0
    return SixLevelState(p)


def apply_cycles(p0, params, n):
    """State after ``n`` SCC cycles: ``(M_III M_II M_I)^n p0``."""
    n = check_count(n, "n")
    p = np.linalg.matrix_power(cycle_matrix(params), n) @ p0.p
    p = np.clip(p, 0.0, None)
    return SixLevelState(p / p.sum())


def scc_efficiencies(params, n):
    """(beta0, beta1): ground-triplet population after ``n`` cycles for each spin preparation."""
    betas = []
    for spin in (MS0, MS1):
        final = apply_cycles(initial_state(params, spin), params, n)
        betas.append(float(final.p[0] + final.p[1]))
    return SccEfficiency(*betas)


def shelf_delay_survival(p_sing, singlet_lifetime, delay, shelved_fraction):
    """NV- survival when the ionizing NIR arrives ``delay`` ns after shelving.

    The singlet population decays with ``singlet_lifetime`` (ns) before the
    NIR train, which ionizes what is left with probability ``p_sing``.
    """
    p_sing = check_probability(p_sing, "p_sing")
    shelved_fraction = check_probability(shelved_fraction, "shelved_fraction")
    delay = check_nonnegative(delay, "delay")
    if singlet_lifetime <= 0.0:
        raise DomainError("singlet_lifetime must be > 0")
    if math.isinf(delay):
        return 1.0
    return 1.0 - shelved_fraction * p_sing * math.exp(-delay / singlet_lifetime)
