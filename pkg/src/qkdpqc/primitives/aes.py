"""AES-256 in counter mode with a nonce-reuse guard.

Integrity is not provided here; the protocol authenticates traffic with a
Wegman-Carter MAC. Ciphertexts are ``nonce (16 bytes) || body``.
"""
from __future__ import annotations

import os
import threading

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import MalformedCiphertext, NonceReuse

KEY_BYTES = 32
NONCE_BYTES = 16


def aes_block_encrypt(block: bytes, key: bytes) -> bytes:
    """Raw AES core on one 16-byte block (used for known-answer tests)."""
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def ctr_keystream_xor(data: bytes, key: bytes, nonce: bytes) -> bytes:
    if len(key) != KEY_BYTES:
        raise ValueError("AES-256 needs a 32-byte key")
    if len(nonce) != NONCE_BYTES:
        raise ValueError("counter block must be 16 bytes")
    ctx = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return ctx.update(data) + ctx.finalize()


def aes_encrypt(message: bytes, key: bytes, nonce: bytes) -> bytes:
    return nonce + ctr_keystream_xor(message, key, nonce)


def aes_decrypt(ciphertext: bytes, key: bytes) -> bytes:
    if len(ciphertext) < NONCE_BYTES:
        raise MalformedCiphertext("AES ciphertext shorter than its nonce")
    return ctr_keystream_xor(ciphertext[NONCE_BYTES:], key, ciphertext[:NONCE_BYTES])


class AesChannel:
    """One AES key plus a record of every initial counter block seen with it.

    Nonces are 64 random bits followed by a 64-bit block counter of zero, so
    distinct messages below 2^64 blocks never overlap in keystream. Seeing a
    nonce twice, on either the sending or the receiving side, is fatal.
    """

    def __init__(self, key: bytes, nonce_source=None):
        if len(key) != KEY_BYTES:
            raise ValueError("AES-256 needs a 32-byte key")
        self.key = key
        self._nonce_source = nonce_source or os.urandom
        self._seen: set[bytes] = set()
        self._lock = threading.Lock()

    def _register(self, nonce: bytes) -> None:
        with self._lock:
            if nonce in self._seen:
                raise NonceReuse(f"nonce {nonce.hex()} already used with this key")
            self._seen.add(nonce)

    def encrypt(self, message: bytes, nonce: bytes | None = None) -> bytes:
        if nonce is None:
            nonce = self._nonce_source(8) + bytes(8)
        self._register(nonce)
        return aes_encrypt(message, self.key, nonce)

    def decrypt(self, ciphertext: bytes) -> bytes:
        if len(ciphertext) < NONCE_BYTES:
            raise MalformedCiphertext("AES ciphertext shorter than its nonce")
        self._register(ciphertext[:NONCE_BYTES])
        return aes_decrypt(ciphertext, self.key)
