"""Key custody: the growing QKD key pool and the partitioned pre-shared key.

Both stores hand out material strictly once. Every read is recorded as a
``(start, end)`` range so an audit can prove that no bit was used twice.
"""
from __future__ import annotations

import hashlib
import json
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, KeyExhausted

PSK_PARTITIONS = ("auth", "aes", "pi")
DEFAULT_PSK_SIZES = {"auth": 4096, "aes": 64 * 1024, "pi": 1024}  # bytes


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def ranges_overlap(ranges) -> bool:
    spans = sorted(ranges)
    return any(prev[1] > cur[0] for prev, cur in zip(spans, spans[1:]))


class QkdKeyPool:
    """Append-only store of distilled secret bits with a monotone read cursor."""

    def __init__(self):
        self._bits = np.zeros(0, dtype=np.uint8)
        self._cursor = 0
        self._holes: list[tuple[int, int]] = []
        self._lock = threading.Lock()
        self.consumed: list[tuple[int, int]] = []

    def __len__(self) -> int:
        return int(self._bits.size)

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def available(self) -> int:
        with self._lock:
            return self._available()

    def _available(self) -> int:
        skipped = sum(max(0, e - max(s, self._cursor)) for s, e in self._holes)
        return self._bits.size - self._cursor - skipped

    def append(self, bits: np.ndarray) -> None:
        with self._lock:
            self._bits = np.concatenate([self._bits, np.asarray(bits, dtype=np.uint8)])

    def take(self, n_bits: int) -> np.ndarray:
        """Consume the next ``n_bits`` unused bits."""
        if n_bits < 0:
            raise ValueError("n_bits must be non-negative")
        with self._lock:
            if self._available() < n_bits:
                raise KeyExhausted(f"QKD pool holds {self._available()} bits, {n_bits} requested")
            out = []
            need = n_bits
            while need:
                for s, e in self._holes:
                    if s <= self._cursor < e:
                        self._cursor = e
                stop = self._cursor + need
                for s, _ in self._holes:
                    if self._cursor < s < stop:
                        stop = s
                out.append(self._bits[self._cursor : stop])
                self.consumed.append((self._cursor, stop))
                need -= stop - self._cursor
                self._cursor = stop
            return np.concatenate(out) if out else np.zeros(0, np.uint8)

    def take_bytes(self, n_bytes: int) -> bytes:
        return bits_to_bytes(self.take(8 * n_bytes))

    def mark(self) -> int:
        return len(self)

    def quarantine_since(self, mark: int) -> int:
        """Retire every unused bit appended after ``mark``; returns how many."""
        with self._lock:
            start = max(mark, self._cursor)
            end = self._bits.size
            if end > start:
                self._holes.append((start, end))
            return max(0, end - start)

    def _rewind_for_tests(self, position: int) -> None:
        # test hook: re-read already used bits (breaks one-time use on purpose)
        self._cursor = position


@dataclass
class _Partition:
    data: bytes
    cursor_bits: int = 0

    @property
    def size_bits(self) -> int:
        return 8 * len(self.data)


@dataclass
class PskLedger:
    """Pre-shared key split into disjoint ``auth``, ``aes`` and ``pi`` partitions."""

    partitions: dict[str, _Partition]
    n_obs_step: int = 2
    consumed: list[tuple[str, int, int]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_bytes(cls, psk: bytes, bounds: dict[str, tuple[int, int]], n_obs_step: int = 2) -> "PskLedger":
        spans = sorted(tuple(v) for v in bounds.values())
        if ranges_overlap(spans):
            raise ConfigError("PSK partitions overlap")
        if set(bounds) != set(PSK_PARTITIONS):
            raise ConfigError(f"PSK manifest must declare exactly {PSK_PARTITIONS}")
        if spans[-1][1] > len(psk):
            raise ConfigError("PSK partition extends past the key file")
        parts = {name: _Partition(psk[s:e]) for name, (s, e) in bounds.items()}
        return cls(parts, n_obs_step=n_obs_step)

    @property
    def n_obs(self) -> int:
        return self.partitions["pi"].size_bits

    def remaining_bits(self, name: str) -> int:
        p = self.partitions[name]
        return p.size_bits - p.cursor_bits

    def cursor(self, name: str) -> int:
        return self.partitions[name].cursor_bits

    def take_bits(self, name: str, n_bits: int) -> np.ndarray:
        with self._lock:
            p = self.partitions[name]
            if p.cursor_bits + n_bits > p.size_bits:
                raise KeyExhausted(f"PSK partition '{name}' exhausted")
            start = p.cursor_bits
            bits = bytes_to_bits(p.data)[start : start + n_bits]
            p.cursor_bits += n_bits
            self.consumed.append((name, start, start + n_bits))
            return bits

    def take_bytes(self, name: str, n_bytes: int) -> bytes:
        return bits_to_bytes(self.take_bits(name, 8 * n_bytes))

    def audit(self) -> bool:
        """True when no partition bit has been handed out twice."""
        for name in self.partitions:
            if ranges_overlap([(s, e) for n, s, e in self.consumed if n == name]):
                return False
        return True


# -- PSK files ---------------------------------------------------------------


def generate_psk(sizes: dict[str, int] | None = None, seed: int | None = None, n_obs_step: int = 2) -> tuple[bytes, dict]:
    """Random PSK bytes plus a manifest; ``seed=None`` draws from OS entropy."""
    sizes = dict(DEFAULT_PSK_SIZES if sizes is None else sizes)
    total = sum(sizes[p] for p in PSK_PARTITIONS)
    if seed is None:
        data = secrets.token_bytes(total)
    else:
        data = hashlib.shake_256(b"qkdpqc-psk" + int(seed).to_bytes(8, "big")).digest(total)
    bounds, pos = {}, 0
    for name in PSK_PARTITIONS:
        bounds[name] = [pos, pos + sizes[name]]
        pos += sizes[name]
    manifest = {
        "version": 1,
        "partitions": bounds,
        "n_obs_step": n_obs_step,
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    return data, manifest


def write_psk(path: str | Path, data: bytes, manifest: dict) -> Path:
    """Write ``<path>`` (raw bytes) and ``<path>.json`` (manifest)."""
    path = Path(path)
    path.write_bytes(data)
    manifest_path = path.with_name(path.name + ".json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_psk(path: str | Path) -> PskLedger:
    path = Path(path)
    data = path.read_bytes()
    manifest = json.loads(path.with_name(path.name + ".json").read_text())
    if manifest.get("version") != 1:
        raise ConfigError("unsupported PSK manifest version")
    if hashlib.sha256(data).hexdigest() != manifest["sha256"]:
        raise ConfigError("PSK file does not match its manifest digest")
    bounds = {k: tuple(v) for k, v in manifest["partitions"].items()}
    return PskLedger.from_bytes(data, bounds, n_obs_step=int(manifest["n_obs_step"]))


def psk_ledger_from_seed(seed: int, sizes: dict[str, int] | None = None, n_obs_step: int = 2) -> PskLedger:
    data, manifest = generate_psk(sizes, seed=seed, n_obs_step=n_obs_step)
    bounds = {k: tuple(v) for k, v in manifest["partitions"].items()}
    return PskLedger.from_bytes(data, bounds, n_obs_step=n_obs_step)
