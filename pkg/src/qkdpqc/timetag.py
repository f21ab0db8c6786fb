"""Detection events, detector-to-bit mapping and coincidence counting.

Ticks are signed 64-bit integer picoseconds since the session epoch.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numba
import numpy as np

from .errors import ConfigError

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
S = 1_000_000_000_000

_INT64_MAX = np.iinfo(np.int64).max
_INT64_MIN = np.iinfo(np.int64).min

RECT, DIAG = 0, 1


class Party(enum.IntEnum):
    ALICE = 0
    BOB = 1


# detector id -> (party, basis, raw polarization bit); H=0, V=1, D=0, A=1
_DETECTORS = {
    1: (Party.ALICE, RECT, 0),  # H
    2: (Party.ALICE, RECT, 1),  # V
    3: (Party.ALICE, DIAG, 0),  # D
    4: (Party.ALICE, DIAG, 1),  # A
    5: (Party.BOB, RECT, 0),
    6: (Party.BOB, RECT, 1),
    7: (Party.BOB, DIAG, 0),
    8: (Party.BOB, DIAG, 1),
}
ALICE_DETECTORS = (1, 2, 3, 4)
BOB_DETECTORS = (5, 6, 7, 8)

# lookup tables indexed by detector id; Bob's rectilinear bit is inverted so
# matching-basis bits agree for the (HV + VH)/sqrt(2) source state
_BASIS_LUT = np.zeros(9, dtype=np.uint8)
_BIT_LUT = np.zeros(9, dtype=np.uint8)
for _d, (_p, _basis, _bit) in _DETECTORS.items():
    _BASIS_LUT[_d] = _basis
    _BIT_LUT[_d] = _bit ^ 1 if (_p is Party.BOB and _basis == RECT) else _bit


def detectors_for(party: Party) -> tuple[int, ...]:
    return ALICE_DETECTORS if party is Party.ALICE else BOB_DETECTORS


def map_detector(d: int) -> tuple[int, int]:
    """Return ``(basis, bit)`` for one detector id (basis 0 = rectilinear)."""
    if d not in _DETECTORS:
        raise ConfigError(f"unknown detector id {d}")
    return int(_BASIS_LUT[d]), int(_BIT_LUT[d])


def map_detectors(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(ids, dtype=np.uint8)
    return _BASIS_LUT[ids], _BIT_LUT[ids]


def detector_for(party: Party, basis: np.ndarray, bit: np.ndarray) -> np.ndarray:
    """Inverse of ``map_detectors`` for one party (vectorized)."""
    basis = np.asarray(basis, dtype=np.uint8)
    bit = np.asarray(bit, dtype=np.uint8)
    raw = bit ^ ((basis == RECT) & (party is Party.BOB)).astype(np.uint8)
    base = 1 if party is Party.ALICE else 5
    return (base + 2 * basis + raw).astype(np.uint8)


@dataclass(frozen=True)
class TagStream:
    """Time-ordered detection events of one party."""

    ticks: np.ndarray
    detectors: np.ndarray
    party: Party

    def __post_init__(self):
        ticks = np.ascontiguousarray(self.ticks, dtype=np.int64)
        dets = np.ascontiguousarray(self.detectors, dtype=np.uint8)
        if ticks.shape != dets.shape or ticks.ndim != 1:
            raise ConfigError("ticks and detectors must be equal-length 1-D arrays")
        if ticks.size > 1 and np.any(np.diff(ticks) < 0):
            raise ConfigError("ticks must be sorted ascending")
        valid = np.array(detectors_for(self.party), dtype=np.uint8)
        if dets.size and not np.isin(dets, valid).all():
            raise ConfigError(f"detector id not owned by {self.party.name}")
        ticks.setflags(write=False)
        dets.setflags(write=False)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "detectors", dets)
        object.__setattr__(self, "party", Party(self.party))

    @classmethod
    def from_unsorted(cls, ticks, detectors, party: Party) -> "TagStream":
        ticks = np.asarray(ticks, dtype=np.int64)
        order = np.argsort(ticks, kind="stable")
        return cls(ticks[order], np.asarray(detectors, dtype=np.uint8)[order], party)

    @classmethod
    def empty(cls, party: Party) -> "TagStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint8), party)

    def _derived(self, ticks: np.ndarray, detectors: np.ndarray) -> "TagStream":
        # shifts and slices of a valid stream are valid; skip the checks
        out = object.__new__(TagStream)
        ticks.setflags(write=False)
        object.__setattr__(out, "ticks", ticks)
        object.__setattr__(out, "detectors", detectors)
        object.__setattr__(out, "party", self.party)
        return out

    def __len__(self) -> int:
        return int(self.ticks.size)

    def shift(self, delta: int) -> "TagStream":
        """Add ``delta`` ps to every tick, refusing to wrap around int64."""
        delta = int(delta)
        if self.ticks.size:
            lo, hi = int(self.ticks[0]), int(self.ticks[-1])
            if hi + delta > _INT64_MAX or lo + delta < _INT64_MIN:
                raise OverflowError("tick shift overflows int64")
        return self._derived(self.ticks + np.int64(delta), self.detectors)

    def window(self, start: int, stop: int) -> "TagStream":
        """Events with ``start <= tick < stop``."""
        lo, hi = np.searchsorted(self.ticks, [start, stop], side="left")
        return self._derived(self.ticks[lo:hi], self.detectors[lo:hi])

    def take(self, index: np.ndarray) -> "TagStream":
        index = np.asarray(index, dtype=np.int64)
        return TagStream(self.ticks[index], self.detectors[index], self.party)

    def bases_and_bits(self) -> tuple[np.ndarray, np.ndarray]:
        return map_detectors(self.detectors)


def _ticks_of(x) -> np.ndarray:
    return x.ticks if isinstance(x, TagStream) else np.asarray(x, dtype=np.int64)


def count_coincidences(a, b, window: int) -> int:
    """Number of pairs ``(a_i, b_j)`` with ``|a_i - b_j| <= window``.

    Pairs are counted with multiplicity: one Bob event may pair with several
    Alice events and vice versa.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    ta, tb = _ticks_of(a), _ticks_of(b)
    if ta.size == 0 or tb.size == 0:
        return 0
    lo = np.searchsorted(tb, ta - window, side="left")
    hi = np.searchsorted(tb, ta + window, side="right")
    return int(np.sum(hi - lo))


def shifted_counts(ta: np.ndarray, tb: np.ndarray, shifts: np.ndarray, window: int, chunk: int = 256) -> np.ndarray:
    """``count_coincidences(ta, tb + s, window)`` for every shift ``s``."""
    shifts = np.asarray(shifts, dtype=np.int64)
    out = np.zeros(shifts.size, dtype=np.int64)
    if ta.size == 0 or tb.size == 0:
        return out
    for start in range(0, shifts.size, chunk):
        s = shifts[start : start + chunk, None]
        lo = np.searchsorted(tb, (ta[None, :] - s - window).ravel(), side="left")
        hi = np.searchsorted(tb, (ta[None, :] - s + window).ravel(), side="right")
        out[start : start + chunk] = (hi - lo).reshape(s.shape[0], ta.size).sum(axis=1)
    return out


def coincidence_histogram(a, b, delays: Iterable[int], window: int) -> list[tuple[int, int]]:
    """Coincidence count of ``a`` against ``b`` shifted by each delay.

    The delay is added to ``b``: if ``b`` lags ``a`` by 10 ns the peak sits
    at a delay of -10 ns.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    delays = np.asarray(list(delays), dtype=np.int64)
    counts = shifted_counts(_ticks_of(a), _ticks_of(b), delays, window)
    return [(int(d), int(c)) for d, c in zip(delays, counts)]


@numba.njit(cache=True)
def _greedy_match(ta, tb, window):
    ia = np.empty(min(ta.size, tb.size), np.int64)
    ib = np.empty(min(ta.size, tb.size), np.int64)
    i = j = k = 0
    while i < ta.size and j < tb.size:
        d = ta[i] - tb[j]
        if -window <= d <= window:
            ia[k] = i
            ib[k] = j
            k += 1
            i += 1
            j += 1
        elif d < 0:
            i += 1
        else:
            j += 1
    return ia[:k], ib[:k]


def match_pairs(a, b, window: int) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one pairing within ``window``: two pointers advance in time
    order, a pair is taken as soon as the heads are within the window, and
    each event is used at most once. Returns index arrays into ``a`` and ``b``.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    return _greedy_match(_ticks_of(a), _ticks_of(b), np.int64(window))


# -- QTT1 time-tag files ---------------------------------------------------

_MAGIC = b"QTT1"
_RECORD = np.dtype([("tick", "<u8"), ("det", "u1")])


def write_tags(path: str | Path, stream: TagStream) -> None:
    """Write ``stream`` as ``QTT1`` + party byte + packed (u64 tick, u8 id) records."""
    if len(stream) and stream.ticks[0] < 0:
        raise ConfigError("QTT1 files store unsigned ticks; stream has negative ticks")
    rec = np.empty(len(stream), dtype=_RECORD)
    rec["tick"] = stream.ticks
    rec["det"] = stream.detectors
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<B", int(stream.party)))
        fh.write(rec.tobytes())


def read_tags(path: str | Path) -> TagStream:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC or len(data) < 5:
        raise ConfigError(f"{path}: not a QTT1 time-tag file")
    party = Party(data[4])
    body = data[5:]
    if len(body) % _RECORD.itemsize:
        raise ConfigError(f"{path}: truncated record")
    rec = np.frombuffer(body, dtype=_RECORD)
    if rec.size and rec["tick"].max() > _INT64_MAX:
        raise ConfigError(f"{path}: tick exceeds int64 range")
    return TagStream(rec["tick"].astype(np.int64), rec["det"].copy(), party)
