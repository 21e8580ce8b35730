"""Stochastic simulation of charge trajectories, photon counts and SCC cycles.

Shots are processed in fixed-size blocks. Block ``b`` draws from a Philox
stream seeded by ``SeedSequence(seed, spawn_key=(..., b))``, so results depend
only on ``(seed, shots, block_size)`` and never on the number of worker threads.

Units: durations in ms, switching rates in kHz, emission rates in kcps.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .charge import ChargePopulation
from .scc import N_LEVELS, MS0, MS1, build_matrices, initial_state
from ._validation import (
    DomainError,
    NumericalError,
    check_count,
    check_nonnegative,
    check_probability,
)

__all__ = [
    "PulseSegment",
    "TrajectoryConfig",
    "SequenceRecords",
    "TransitionCounts",
    "SccSimulation",
    "MAX_EVENTS_PER_SEGMENT",
    "run_sequence",
    "simulate_charge_histogram",
    "simulate_rate_experiment",
    "simulate_scc",
]

MAX_EVENTS_PER_SEGMENT = 1_000_000

# spawn-key prefixes keep streams of different experiment kinds apart
_KEY_SEQUENCE = 0
_KEY_SCC = 1


@dataclass(frozen=True)
class PulseSegment:
    """One illumination interval of a pulse sequence.

    ``flip_probability`` applies an instantaneous charge flip at the end of
    the segment, used to model a destructive verification readout.
    """

    duration: float
    gamma_ion: float = 0.0
    gamma_rec: float = 0.0
    emit_rate_minus: float = 0.0
    emit_rate_zero: float = 0.0
    record_photons: bool = False
    flip_probability: float = 0.0

    def __post_init__(self):
        for name in ("duration", "gamma_ion", "gamma_rec", "emit_rate_minus", "emit_rate_zero"):
            check_nonnegative(getattr(self, name), name)
        check_probability(self.flip_probability, "flip_probability")


@dataclass(frozen=True)
class TrajectoryConfig:
    seed: int
    shots: int
    block_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        check_count(self.seed, "seed")
        if self.seed >= 2**64:
            raise DomainError("seed must fit in 64 bits")
        check_count(self.shots, "shots", minimum=1)
        check_count(self.block_size, "block_size", minimum=1)
        check_count(self.workers, "workers", minimum=1)

    def blocks(self):
        starts = range(0, self.shots, self.block_size)
        return [(i, min(self.block_size, self.shots - s)) for i, s in enumerate(starts)]

    def rng(self, *key):
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class SequenceRecords:
    """Per-shot outcomes. Charge arrays hold True for NV-."""

    initial_charge: np.ndarray
    final_charge: np.ndarray
    photons: np.ndarray  # (shots, recorded segments)
    n_switches: np.ndarray

    def histogram(self, segment=0):
        """Occurrences indexed by photon count for one recorded segment."""
        if self.photons.shape[1] == 0:
            raise DomainError("no segment recorded photons")
        return np.bincount(self.photons[:, segment])


@dataclass(frozen=True)
class TransitionCounts:
    """Trials and observed switches, split by the heralded initial charge."""

    minus_trials: int
    minus_transitions: int
    zero_trials: int
    zero_transitions: int


@dataclass(frozen=True)
class SccSimulation:
    beta0: float
    beta1: float
    err0: float
    err1: float


def _map_blocks(config, fn):
    blocks = config.blocks()
    if config.workers == 1 or len(blocks) == 1:
        return [fn(*b) for b in blocks]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


def _run_segment(rng, state, seg):
    """Advance ``state`` (bool, True = NV-) through one segment in place.

    Returns (photon counts or None, switch counts).
    """
    n = state.size
    total = seg.gamma_ion + seg.gamma_rec
    # mean switch count of a long telegraph process; 10% margin is >100 sigma at the cap
    if total > 0 and seg.duration * 2 * seg.gamma_ion * seg.gamma_rec / total > 1.1 * MAX_EVENTS_PER_SEGMENT:
        raise NumericalError(
            f"expected more than {MAX_EVENTS_PER_SEGMENT} charge switches in one segment; "
            "rates are too high for the segment duration")
    photons =np.zeros(n, dtype=np.int64) if seg.record_photons else None
    switches = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, seg.duration)
    active = np.arange(n) if seg.duration > 0 else np.arange(0)
    while active.size:
        s = state[active]
        rate = np.where(s, seg.gamma_ion, seg.gamma_rec)
        with np.errstate(divide="ignore"):
            dwell = rng.exponential(1.0, active.size) / rate
        switched = dwell < remaining[active]
        step = np.where(switched, dwell, remaining[active])
        if photons is not None:
            emit = np.where(s, seg.emit_rate_minus, seg.emit_rate_zero)
            photons[active] += rng.poisson(emit * step)
        remaining[active] -= step
        hit = active[switched]
        state[hit] = ~state[hit]
        switches[hit] += 1
        if hit.size and switches[hit].max() > MAX_EVENTS_PER_SEGMENT:
            raise NumericalError(
                f"more than {MAX_EVENTS_PER_SEGMENT} charge switches in one segment; "
                "rates are too high for the segment duration")
        active = hit
    if seg.flip_probability > 0.0:
        flip = rng.random(n) < seg.flip_probability
        state[flip] = ~state[flip]
    return photons, switches


def run_sequence(segments, initial, config):
    """Simulate ``config.shots`` independent runs of a pulse sequence.

    Parameters
    ----------
    segments : sequence of PulseSegment
    initial : ChargePopulation
        Charge distribution at the start of each shot.
    config : TrajectoryConfig

    Returns
    -------
    SequenceRecords
    """
    segments = list(segments)
    for seg in segments:
        if not isinstance(seg, PulseSegment):
            raise DomainError("segments must be PulseSegment instances")
    if not isinstance(initial, ChargePopulation):
        raise DomainError("initial must be a ChargePopulation")
    n_rec = sum(seg.record_photons for seg in segments)

    def block(index, size):
        rng = config.rng(_KEY_SEQUENCE, index)
        state = rng.random(size) < initial.p_minus
        start = state.copy()
        photons = np.zeros((size, n_rec), dtype=np.int64)
        switches = np.zeros(size, dtype=np.int64)
        col = 0
        for seg in segments:
            counts, sw = _run_segment(rng, state, seg)
            switches += sw
            if counts is not None:
                photons[:, col] = counts
                col += 1
        return start, state, photons, switches

    parts = _map_blocks(config, block)
    return SequenceRecords(
        initial_charge=np.concatenate([p[0] for p in parts]),
        final_charge=np.concatenate([p[1] for p in parts]),
        photons=np.concatenate([p[2] for p in parts]),
        n_switches=np.concatenate([p[3] for p in parts]),
    )


def simulate_charge_histogram(mixture, tau_read, config, *, gamma_ion=0.0, gamma_rec=0.0):
    """Photon-count histogram of a single charge readout of ``tau_read`` ms.

    Emission rates are ``eta / tau_read`` for each charge state and the
    initial NV- probability is the mixture weight.
    """
    if tau_read <= 0.0:
        raise DomainError("tau_read must be > 0")
    seg = PulseSegment(tau_read, gamma_ion, gamma_rec,
                       mixture.eta_minus / tau_read, mixture.eta_zero / tau_read,
                       record_photons=True)
    initial = ChargePopulation.from_minus(mixture.weight_minus)
    return run_sequence([seg], initial, config).histogram(0)


def simulate_rate_experiment(true_ion, true_rec, pulse_duration, config, *,
                             initial=ChargePopulation(0.5, 0.5), verify_flip=0.0):
    """Count charge switches during a pulse for ``config.shots`` trials.

    Each trial heralds the initial charge with a verification readout, which
    flips the charge with probability ``verify_flip`` (zero for an ideal
    verify), applies the pulse and reads the final charge without error.
    """
    segments = [PulseSegment(0.0, flip_probability=verify_flip),
                PulseSegment(pulse_duration, true_ion, true_rec)]
    rec = run_sequence(segments, initial, config)
    changed = rec.initial_charge != rec.final_charge
    minus = rec.initial_charge
    return TransitionCounts(
        minus_trials=int(minus.sum()),
        minus_transitions=int((changed & minus).sum()),
        zero_trials=int((~minus).sum()),
        zero_transitions=int((changed & ~minus).sum()),
    )


def _sample_columns(rng, cum, state):
    """Draw the next level for each shot from the cumulative column ``cum[:, state]``."""
    u = rng.random(state.size)
    nxt = (u[:, None] >= cum[:, state].T).sum(axis=1)
    return np.minimum(nxt, N_LEVELS - 1)


def simulate_scc(params, n, config):
    """Sample ``n`` SCC cycles shot by shot for each spin preparation.

    Returns the NV- fractions after the cycles with their binomial standard
    errors; ``config.shots`` shots are run per spin.
    """
    n = check_count(n, "n")
    cums = [np.cumsum(m, axis=0) for m in build_matrices(params)]
    out = []
    for spin in (MS0, MS1):
        p0 = initial_state(params, spin).p
        cum0 = np.cumsum(p0)

        def block(index, size, spin=spin, cum0=cum0):
            rng = config.rng(_KEY_SCC, spin, index)
            state = np.minimum((rng.random(size)[:, None] >= cum0).sum(axis=1), N_LEVELS - 1)
            for _ in range(n):
                for cum in cums:
                    state = _sample_columns(rng, cum, state)
            return int(np.count_nonzero(state <= 1))

        hits = sum(_map_blocks(config, block))
        beta = hits / config.shots
        out.append((beta, float(np.sqrt(beta * (1.0 - beta) / config.shots))))
    (b0, e0), (b1, e1) = out
    return SccSimulation(b0, b1, e0, e1)
