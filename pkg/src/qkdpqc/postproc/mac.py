"""Wegman-Carter authentication with a polynomial hash over GF(2^64).

The message is split into 64-bit big-endian words, a word holding the bit
length is appended, and the words are evaluated as a polynomial at the
secret point ``k`` by Horner's rule. The hash is then masked with 64 fresh
one-time key bits. Two distinct messages of at most ``L`` words collide for
at most ``L + 1`` values of ``k``, so a forger succeeds with probability
about ``(L + 1) / 2^64``.

Field: GF(2)[x] / (x^64 + x^4 + x^3 + x + 1).
"""
from __future__ import annotations

import hmac

import numba
import numpy as np

KEY_BYTES = 16  # 8 bytes hash point + 8 bytes one-time mask
TAG_BYTES = 8
_U64 = np.uint64
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def gf64_mul(a, b) -> np.ndarray:
    """Elementwise product in GF(2^64) of two uint64 arrays."""
    a = np.asarray(a, dtype=_U64)
    b = np.asarray(b, dtype=_U64)
    a, b = np.broadcast_arrays(a, b)
    lo = np.zeros(a.shape, dtype=_U64)
    hi = np.zeros(a.shape, dtype=_U64)
    one = _U64(1)
    for i in range(64):
        mask = ((b >> _U64(i)) & one) * _ALL_ONES
        lo ^= (a << _U64(i)) & mask
        if i:
            hi ^= (a >> _U64(64 - i)) & mask
    # fold hi * x^64 == hi * (x^4 + x^3 + x + 1); bits pushed past x^63 fold once more
    carry = (hi >> _U64(60)) ^ (hi >> _U64(61)) ^ (hi >> _U64(63))
    lo ^= hi ^ (hi << _U64(1)) ^ (hi << _U64(3)) ^ (hi << _U64(4))
    lo ^= carry ^ (carry << _U64(1)) ^ (carry << _U64(3)) ^ (carry << _U64(4))
    return lo


@numba.njit(cache=True)
def _horner(words, point):
    # scalar twin of poly_hash_words for one message: shift-and-add multiply,
    # reducing by x^64 = x^4 + x^3 + x + 1 whenever the top bit falls out
    poly = np.uint64(0b11011)
    one = np.uint64(1)
    acc = np.uint64(0)
    for j in range(words.size):
        a = acc ^ words[j]
        prod = np.uint64(0)
        for i in range(63, -1, -1):
            top = prod >> np.uint64(63)
            prod = prod << one
            if top:
                prod ^= poly
            if (point >> np.uint64(i)) & one:
                prod ^= a
        acc = prod
    return acc


def message_words(message: bytes) -> np.ndarray:
    """Big-endian 64-bit words of ``message`` (zero padded) plus a bit-length word."""
    padded = message + b"\x00" * (-len(message) % 8)
    words = np.frombuffer(padded, dtype=">u8").astype(_U64)
    return np.append(words, _U64(8 * len(message)))


def poly_hash_words(words: np.ndarray, point) -> np.ndarray:
    """Horner evaluation along the last axis; ``words`` may be batched (rows = messages)."""
    words = np.asarray(words, dtype=_U64)
    point = np.asarray(point, dtype=_U64)
    if words.ndim == 1 and point.ndim == 0:
        return _U64(_horner(words, point[()]))
    acc = np.zeros(words.shape[:-1], dtype=_U64)
    for j in range(words.shape[-1]):
        acc = gf64_mul(acc ^ words[..., j], point)
    return acc


def poly_hash(message: bytes, point: int) -> int:
    return int(poly_hash_words(message_words(message), _U64(point)))


def _split_key(key: bytes) -> tuple[int, int]:
    if len(key) != KEY_BYTES:
        raise ValueError(f"WC-MAC key must be {KEY_BYTES} bytes")
    return int.from_bytes(key[:8], "big"), int.from_bytes(key[8:], "big")


def wc_mac_tag(message: bytes, key: bytes) -> bytes:
    """64-bit tag; ``key`` must be fresh one-time material (16 bytes)."""
    point, mask = _split_key(key)
    return (poly_hash(message, point) ^ mask).to_bytes(TAG_BYTES, "big")


def wc_mac_verify(message: bytes, tag: bytes, key: bytes) -> bool:
    return hmac.compare_digest(wc_mac_tag(message, key), tag)

