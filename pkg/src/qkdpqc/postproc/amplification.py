"""Privacy amplification by Toeplitz hashing.

An ``m x n`` Toeplitz matrix is fixed by its first column and first row,
i.e. by ``m + n - 1`` seed bits: ``T[i, j] = seed[i - j + n - 1]``. The
family is 2-universal, and ``T @ x`` is one slice of the full convolution
``seed * x``, which is what gets computed.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from ..errors import EmptyKey


def toeplitz_seed(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, m + n - 1, dtype=np.uint8)


def toeplitz_matrix(seed: np.ndarray, n: int) -> np.ndarray:
    m = seed.size - n + 1
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return seed[i - j + n - 1].astype(np.uint8)


def toeplitz_hash(bits: np.ndarray, seed: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    seed = np.asarray(seed, dtype=np.uint8)
    n = bits.size
    m = seed.size - n + 1
    if m <= 0:
        return np.zeros(0, np.uint8)
    conv = np.rint(fftconvolve(seed.astype(float), bits.astype(float))).astype(np.int64)
    return (conv[n - 1 : n - 1 + m] & 1).astype(np.uint8)


def final_length(r: float, n: int) -> int:
    return math.ceil(r * n)


def privacy_amplify(bits: np.ndarray, r: float, seed) -> np.ndarray:
    """Compress ``bits`` to ``ceil(r * len(bits))`` bits.

    ``seed`` is either the explicit Toeplitz seed (``m + n - 1`` bits) or an
    integer / Generator from which one is drawn.
    """
    if r <= 0:
        raise EmptyKey("key rate is not positive; no secret key can be distilled")
    if r > 1:
        raise ValueError("r must not exceed 1")
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.size
    m = final_length(r, n)
    if isinstance(seed, np.ndarray):
        if seed.size != m + n - 1:
            raise ValueError(f"Toeplitz seed must have {m + n - 1} bits, got {seed.size}")
        s = seed
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        s = toeplitz_seed(n, m, rng)
    return toeplitz_hash(bits, s)
