"""GPS-free clock synchronization from photon-pair time correlations.

A coarse cross-correlation scan over a wide offset range runs once, on the
first acquisition round. Every round then runs a fine alignment that
histograms the residual time differences of one-to-one matched pairs and
moves Bob's clock by the modal bin. Drift is never fitted explicitly; it is
absorbed by re-estimating the offset each round.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, PeakNotFound
from .timetag import MS, NS, TagStream, match_pairs, shifted_counts


@dataclass(frozen=True)
class SyncParams:
    t_acq: int = 50 * MS
    delta: int = 200 * NS
    fwhm: int = 1 * NS
    scan_range: int = 1 * MS
    bin_width: int = 1 * NS
    min_peak_count: int = 10
    peak_factor: float = 5.0

    def __post_init__(self):
        if not 0 < self.delta < self.scan_range:
            raise ConfigError("need 0 < delta < scan_range")
        if self.bin_width <= 0 or self.fwhm <= 0 or self.t_acq <= 0:
            raise ConfigError("bin_width, fwhm and t_acq must be positive")

    @property
    def window(self) -> int:
        """Coincidence window of the coarse scan and of fine pair matching."""
        return self.delta + 2 * self.fwhm


@dataclass(frozen=True)
class SyncState:
    tau_coarse: int = 0
    tau_accum: int = 0
    round: int = 0
    last_tau: int = 0

    @property
    def total_correction(self) -> int:
        return self.tau_coarse + self.tau_accum


def _argmax_toward_zero(values: np.ndarray, positions: np.ndarray) -> int:
    """Index of the maximum; ties go to the smallest |position|, then the smallest position."""
    best = values.max()
    idx = np.flatnonzero(values == best)
    key = np.lexsort((positions[idx], np.abs(positions[idx])))
    return int(idx[key[0]])


def _check_peak(counts: np.ndarray, peak: int, guard: int, p: SyncParams, what: str) -> None:
    # background level: median of nonzero counts away from the peak itself
    mask = np.ones(counts.size, dtype=bool)
    mask[max(0, peak - guard) : peak + guard + 1] = False
    rest = counts[mask]
    rest = rest[rest > 0]
    background = float(np.median(rest)) if rest.size else 0.0
    threshold = max(p.min_peak_count, p.peak_factor * background)
    if counts[peak] < threshold:
        raise PeakNotFound(f"{what}: peak {int(counts[peak])} below threshold {threshold:g}")


def coarse_align(a: TagStream, b: TagStream, p: SyncParams, n_jobs: int = 1) -> int:
    """Offset on the ``delta`` grid that maximises coincidences of ``a`` with ``b + offset``."""
    shifts = np.arange(-p.scan_range, p.scan_range + 1, p.delta, dtype=np.int64)
    if n_jobs > 1:
        parts = np.array_split(shifts, n_jobs)
        with ThreadPoolExecutor(n_jobs) as pool:
            counts = np.concatenate(list(pool.map(lambda s: shifted_counts(a.ticks, b.ticks, s, p.window), parts)))
    else:
        counts = shifted_counts(a.ticks, b.ticks, shifts, p.window)
    peak = _argmax_toward_zero(counts, shifts)
    _check_peak(counts, peak, guard=2 + math.ceil(p.window / p.delta), p=p, what="coarse scan")
    return int(shifts[peak])


def residual_histogram(a: TagStream, b: TagStream, p: SyncParams) -> tuple[np.ndarray, np.ndarray]:
    """Bin indices and counts of ``a - b`` over one-to-one matched pairs.

    Bin ``k`` is centred on ``k * bin_width``.
    """
    ia, ib = match_pairs(a, b, p.window)
    dt = a.ticks[ia] - b.ticks[ib]
    if dt.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    w = p.bin_width
    idx = np.floor_divide(dt + w // 2, w)
    lo = int(idx.min())
    counts = np.bincount(idx - lo)
    return np.arange(lo, lo + counts.size, dtype=np.int64), counts


def fine_align(a: TagStream, b: TagStream, state: SyncState, p: SyncParams) -> tuple[int, TagStream, SyncState]:
    """One fine-alignment round.

    ``b`` is the raw (uncorrected) Bob slice. Returns the round's offset
    estimate ``tau = tau_coarse + tau_fine``, Bob's slice with the full
    accumulated correction applied, and the updated state.
    """
    shifted = b.shift(state.tau_coarse + state.tau_accum)
    bins, counts = residual_histogram(a, shifted, p)
    if counts.size == 0:
        raise PeakNotFound("fine alignment: no pairs inside the matching window")
    peak = _argmax_toward_zero(counts, bins)
    _check_peak(counts, peak, guard=2, p=p, what="fine alignment")
    tau_fine = int(bins[peak]) * p.bin_width
    tau = state.tau_coarse + tau_fine
    new_state = SyncState(
        tau_coarse=0,
        tau_accum=state.tau_accum + tau,
        round=state.round + 1,
        last_tau=tau,
    )
    return tau, shifted.shift(tau_fine), new_state


@dataclass(frozen=True)
class SyncResult:
    aligned: TagStream
    rounds: list[SyncState]
    origin: int

    @property
    def final_state(self) -> SyncState:
        return self.rounds[-1]


def round_windows(a: TagStream, b: TagStream, p: SyncParams, origin: int | None = None) -> tuple[int, int]:
    """``(origin, n_rounds)`` covering both streams; the last round absorbs any short tail."""
    firsts = [int(s.ticks[0]) for s in (a, b) if len(s)]
    lasts = [int(s.ticks[-1]) for s in (a, b) if len(s)]
    if not firsts:
        raise PeakNotFound("no events to synchronize", round_index=1)
    if origin is None:
        origin = (min(firsts) // p.t_acq) * p.t_acq
    span = max(lasts) - origin
    return origin, max(1, round(span / p.t_acq))


def run_sync(
    a: TagStream,
    b: TagStream,
    p: SyncParams,
    origin: int | None = None,
    initial: SyncState | None = None,
    n_jobs: int = 1,
) -> SyncResult:
    """Synchronize Bob's stream to Alice's, one ``t_acq`` round at a time.

    Without ``initial`` the first round starts with a coarse scan; with it,
    the carried-over correction is used and the coarse scan is skipped.
    """
    origin, n_rounds = round_windows(a, b, p, origin)
    state = initial
    trace: list[SyncState] = []
    pieces_t, pieces_d = [], []
    edges = [origin + k * p.t_acq for k in range(n_rounds + 1)]
    big = np.iinfo(np.int64).max // 4
    edges[0], edges[-1] = -big, big
    for k in range(n_rounds):
        lo, hi = edges[k], edges[k + 1]
        a_k = a.window(lo, hi)
        try:
            if state is None:
                b_k = b.window(lo, hi)
                state = SyncState(tau_coarse=coarse_align(a_k, b_k, p, n_jobs=n_jobs))
            else:
                acc = state.tau_accum
                b_k = b.window(lo - acc, hi - acc)
            _, aligned, state = fine_align(a_k, b_k, state, p)
        except PeakNotFound as exc:
            raise PeakNotFound(f"round {k + 1}: {exc}", round_index=k + 1) from exc
        trace.append(replace(state, round=k + 1))
        pieces_t.append(aligned.ticks)
        pieces_d.append(aligned.detectors)
    aligned = TagStream.from_unsorted(np.concatenate(pieces_t), np.concatenate(pieces_d), b.party)
    return SyncResult(aligned=aligned, rounds=trace, origin=origin)
