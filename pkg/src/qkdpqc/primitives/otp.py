"""One-time pad over bits drawn from the QKD key pool."""
from __future__ import annotations

import numpy as np

from .keys import QkdKeyPool


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("operands differ in length")
    return (np.frombuffer(a, np.uint8) ^ np.frombuffer(b, np.uint8)).tobytes()


def otp_encrypt(message: bytes, pool: QkdKeyPool) -> bytes:
    """XOR ``message`` with the next ``8 * len(message)`` unused pool bits."""
    return xor_bytes(message, pool.take_bytes(len(message)))


otp_decrypt = otp_encrypt
