"""Syndrome reconciliation over sub-blocks of shipped LDPC codes."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DecodeFailure, InsufficientBits
from .ldpc import LdpcCode, decode_syndrome, shipped_code, syndrome

BLOCK_QUANTUM = 256
MIN_BLOCK = 1024
MAX_BLOCK = 4096


def plan_blocks(n_bits: int, quantum: int = BLOCK_QUANTUM, min_block: int = MIN_BLOCK, max_block: int = MAX_BLOCK) -> list[int]:
    """Split ``n_bits`` into near-equal blocks with lengths that are multiples of ``quantum``.

    Bits beyond the returned total are left unreconciled (and discarded).
    """
    usable = (n_bits // quantum) * quantum
    if usable < min_block:
        raise InsufficientBits(f"{n_bits} bits is below the smallest block of {min_block}")
    n_blocks = -(-usable // max_block)
    size = (usable // n_blocks // quantum) * quantum
    if size < min_block:
        raise InsufficientBits(f"cannot tile {n_bits} bits with blocks of at least {min_block}")
    return [size] * n_blocks


def block_codes(sizes: list[int]) -> list[LdpcCode]:
    return [shipped_code(n) for n in sizes]


def block_syndromes(bits: np.ndarray, codes: list[LdpcCode]) -> list[np.ndarray]:
    out, pos = [], 0
    for code in codes:
        out.append(syndrome(code, bits[pos : pos + code.n]))
        pos += code.n
    return out


def reconcile(bits: np.ndarray, target_syndrome: np.ndarray, q: float, code: LdpcCode, max_iterations: int = 100) -> np.ndarray:
    """Correct ``bits`` so their syndrome equals ``target_syndrome`` (raises DecodeFailure)."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != code.n:
        raise ConfigError(f"block has {bits.size} bits, code expects {code.n}")
    result = decode_syndrome(code, bits, target_syndrome, q, max_iterations)
    if not np.array_equal(syndrome(code, result.bits), np.asarray(target_syndrome, np.uint8)):
        raise DecodeFailure("decoder output does not match the target syndrome", result.iterations)
    return result.bits
