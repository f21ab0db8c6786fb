"""Statistical stand-in for the entangled photon source, channels and detectors.

Random draws come from numpy's PCG64 generator, with one independent
substream per physical process (pair emission, each arm, each detector's
background) spawned from a single ``SeedSequence``. Each substream draws its
variates in a fixed order, so changing one knob (say the jitter) leaves every
other random choice untouched.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError
from .timetag import ALICE_DETECTORS, BOB_DETECTORS, S, Party, TagStream, detector_for

_N_SUBSTREAMS = 3 + len(ALICE_DETECTORS) + len(BOB_DETECTORS)


@dataclass(frozen=True)
class SourceConfig:
    """Operating point of the simulated link.

    Defaults follow the laboratory setup: 10^4 pairs/s delivered into the two
    arms, 10.3 dB end-to-end loss on Alice's (signal) arm with detection
    already folded in, visibility 0.873 and 100 counts/s of background per
    detector. Times are picoseconds; ``drift_rate`` is dimensionless (ps of
    Bob clock error per ps of elapsed time).
    """

    pair_rate: float = 10_000.0
    duration: float = 1.0
    visibility: float = 0.873
    loss_alice_db: float = 10.3
    loss_bob_db: float = 0.0
    detector_efficiency: float = 1.0
    background_rate: float = 100.0
    jitter_sigma: int = 300
    clock_offset: int = 0
    drift_rate: float = 0.0
    start_time: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ConfigError("visibility must lie in [0, 1]")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        for name in ("pair_rate", "background_rate", "loss_alice_db", "loss_bob_db", "jitter_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ConfigError("detector_efficiency must lie in [0, 1]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def survival_alice(self) -> float:
        return 10 ** (-self.loss_alice_db / 10) * self.detector_efficiency

    @property
    def survival_bob(self) -> float:
        return 10 ** (-self.loss_bob_db / 10) * self.detector_efficiency

    @property
    def coincidence_rate(self) -> float:
        """Expected rate of pairs detected on both sides (per second)."""
        return self.pair_rate * self.survival_alice * self.survival_bob

    def singles_rate(self, party: Party) -> float:
        eta = self.survival_alice if party is Party.ALICE else self.survival_bob
        return self.pair_rate * eta + 4 * self.background_rate

    def with_(self, **changes) -> "SourceConfig":
        return replace(self, **changes)

    def to_mapping(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "SourceConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown source keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kind = known[key]
            kwargs[key] = int(value) if kind in ("int", int) else float(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class GroundTruth:
    """What the simulator injected, for test oracles."""

    clock_offset: int
    drift_rate: float
    n_pairs: int
    emission: np.ndarray  # ticks of pairs detected by both parties
    alice_index: np.ndarray  # index of each such pair in the Alice stream
    bob_index: np.ndarray  # index of each such pair in the Bob stream

    def bob_clock_error(self, t: np.ndarray | int) -> np.ndarray:
        """Offset of Bob's clock relative to true time at true time ``t``."""
        return self.clock_offset + np.rint(self.drift_rate * np.asarray(t, dtype=float)).astype(np.int64)


def qber_from_visibility(v: float) -> float:
    """Matching-basis error probability implied by visibility alone."""
    if not 0.0 <= v <= 1.0:
        raise ConfigError("visibility must lie in [0, 1]")
    return (1.0 - v) / 2.0


def duration_for(config: SourceConfig, n_coincidences: int, margin_sigma: float = 6.0) -> float:
    """Acquisition time that yields ``n_coincidences`` with overwhelming probability."""
    rate = config.coincidence_rate
    if rate <= 0:
        raise ConfigError("configuration produces no coincidences")
    n = n_coincidences + margin_sigma * math.sqrt(n_coincidences) + 10
    return n / rate


def _background(rng: np.random.Generator, rate: float, start: int, duration_ps: int) -> np.ndarray:
    count = rng.poisson(rate * duration_ps / S)
    return start + np.floor(rng.random(count) * duration_ps).astype(np.int64)


def _assemble(party, pair_ticks, pair_dets, pair_ids, bg_ticks, bg_dets):
    ticks = np.concatenate([pair_ticks, *bg_ticks])
    dets = np.concatenate([pair_dets, *bg_dets]).astype(np.uint8)
    ids = np.concatenate([pair_ids, np.full(sum(len(t) for t in bg_ticks), -1, np.int64)])
    order = np.argsort(ticks, kind="stable")
    return TagStream(ticks[order], dets[order], party), ids[order]


def generate(config: SourceConfig) -> tuple[TagStream, TagStream, GroundTruth]:
    """Simulate one acquisition window for both parties."""
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(config.seed).spawn(_N_SUBSTREAMS)]
    rng_pairs, rng_a, rng_b = streams[:3]
    rng_bg = streams[3:]

    duration_ps = int(round(config.duration * S))
    start = int(config.start_time)
    n_pairs = int(rng_pairs.poisson(config.pair_rate * config.duration))
    emission = np.sort(start + np.floor(rng_pairs.random(n_pairs) * duration_ps).astype(np.int64))
    bit_a = rng_pairs.integers(0, 2, n_pairs, dtype=np.uint8)
    agree = rng_pairs.random(n_pairs) < (1.0 + config.visibility) / 2.0
    random_bit = rng_pairs.integers(0, 2, n_pairs, dtype=np.uint8)

    def arm(rng, eta):
        alive = rng.random(n_pairs) < eta
        basis = rng.integers(0, 2, n_pairs, dtype=np.uint8)
        jitter = np.rint(rng.standard_normal(n_pairs) * config.jitter_sigma).astype(np.int64)
        return alive, basis, jitter

    alive_a, basis_a, jit_a = arm(rng_a, config.survival_alice)
    alive_b, basis_b, jit_b = arm(rng_b, config.survival_bob)
    same = basis_a == basis_b
    bit_b = np.where(same, np.where(agree, bit_a, bit_a ^ 1), random_bit).astype(np.uint8)

    ids = np.arange(n_pairs, dtype=np.int64)
    det_a = detector_for(Party.ALICE, basis_a, bit_a)
    det_b = detector_for(Party.BOB, basis_b, bit_b)

    bg_a = [_background(rng_bg[i], config.background_rate, start, duration_ps) for i in range(4)]
    bg_b = [_background(rng_bg[4 + i], config.background_rate, start, duration_ps) for i in range(4)]
    bg_det_a = [np.full(len(t), d, np.uint8) for t, d in zip(bg_a, ALICE_DETECTORS)]
    bg_det_b = [np.full(len(t), d, np.uint8) for t, d in zip(bg_b, BOB_DETECTORS)]

    alice, alice_ids = _assemble(
        Party.ALICE, (emission + jit_a)[alive_a], det_a[alive_a], ids[alive_a], bg_a, bg_det_a
    )

    def bob_clock(t):
        return t + int(config.clock_offset) + np.rint(config.drift_rate * t.astype(float)).astype(np.int64)

    bob, bob_ids = _assemble(
        Party.BOB, bob_clock((emission + jit_b)[alive_b]), det_b[alive_b], ids[alive_b],
        [bob_clock(t) for t in bg_b], bg_det_b,
    )

    both = alive_a & alive_b
    pos_a = np.full(n_pairs, -1, np.int64)
    pos_b = np.full(n_pairs, -1, np.int64)
    mask_a = alice_ids >= 0
    mask_b = bob_ids >= 0
    pos_a[alice_ids[mask_a]] = np.nonzero(mask_a)[0]
    pos_b[bob_ids[mask_b]] = np.nonzero(mask_b)[0]
    truth = GroundTruth(
        clock_offset=int(config.clock_offset),
        drift_rate=float(config.drift_rate),
        n_pairs=n_pairs,
        emission=emission[both],
        alice_index=pos_a[both],
        bob_index=pos_b[both],
    )
    return alice, bob, truth

