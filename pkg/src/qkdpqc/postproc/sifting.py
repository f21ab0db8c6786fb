"""Time-domain filtering, basis sifting and QBER estimation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import EmptyKey, InsufficientBits
from ..timetag import NS, TagStream, match_pairs

DEFAULT_WINDOW = 1 * NS


@dataclass(frozen=True)
class SiftedKey:
    bits: np.ndarray
    basis_tags: np.ndarray
    n_raw: int
    # position of every retained bit in the raw (coincidence-ordered) record
    index: np.ndarray

    def __len__(self) -> int:
        return int(self.bits.size)

    def without(self, positions: np.ndarray) -> "SiftedKey":
        keep = np.ones(self.bits.size, dtype=bool)
        keep[positions] = False
        return SiftedKey(self.bits[keep], self.basis_tags[keep], self.n_raw, self.index[keep])


def raw_records(stream: TagStream, index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(bases, bits)`` of the coincident events selected by ``index``."""
    bases, bits = stream.bases_and_bits()
    return bases[index], bits[index]


def sift(bases_a: np.ndarray, bits: np.ndarray, bases_b: np.ndarray) -> SiftedKey:
    """Keep the positions where both bases agree (one party's view)."""
    bases_a = np.asarray(bases_a, dtype=np.uint8)
    bases_b = np.asarray(bases_b, dtype=np.uint8)
    keep = np.flatnonzero(bases_a == bases_b)
    return SiftedKey(np.asarray(bits, np.uint8)[keep], bases_a[keep], int(bases_a.size), keep)


def time_filter_and_sift(
    a: TagStream,
    b: TagStream,
    window: int = DEFAULT_WINDOW,
    n_raw: int | None = None,
) -> tuple[SiftedKey, SiftedKey, dict[str, np.ndarray]]:
    """Pair coincident detections one-to-one and sift on basis agreement.

    ``b`` must already be synchronized to ``a``. With ``n_raw`` set, only the
    first ``n_raw`` coincidences are used. The returned transcript holds the
    basis arrays the parties would exchange.
    """
    ia, ib = match_pairs(a, b, window)
    if n_raw is not None:
        ia, ib = ia[:n_raw], ib[:n_raw]
    if ia.size == 0:
        raise EmptyKey("no coincidences inside the window")
    bases_a, bits_a = raw_records(a, ia)
    bases_b, bits_b = raw_records(b, ib)
    ka = sift(bases_a, bits_a, bases_b)
    kb = sift(bases_b, bits_b, bases_a)
    return ka, kb, {"bases_a": bases_a, "bases_b": bases_b}


def sample_positions(length: int, sample_size: int, rng: np.random.Generator) -> np.ndarray:
    if sample_size > length:
        raise InsufficientBits(f"cannot disclose {sample_size} of {length} bits")
    return np.sort(rng.choice(length, size=sample_size, replace=False))


class QberEstimate(NamedTuple):
    q: float
    ka: SiftedKey
    kb: SiftedKey
    disclosed: np.ndarray


def estimate_qber(
    ka: SiftedKey,
    kb: SiftedKey,
    n_raw: int,
    seed: int | np.random.Generator,
    sample_size: int | None = None,
) -> QberEstimate:
    """Disclose a random subset (``n_raw // 4`` bits by default) and measure the mismatch."""
    if len(ka) != len(kb):
        raise ValueError("sifted keys differ in length")
    size = n_raw // 4 if sample_size is None else sample_size
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = sample_positions(len(ka), size, rng)
    if size == 0:
        raise InsufficientBits("empty QBER sample")
    q = float(np.count_nonzero(ka.bits[pos] != kb.bits[pos])) / size
    return QberEstimate(q, ka.without(pos), kb.without(pos), pos)
