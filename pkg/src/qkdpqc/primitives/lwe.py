"""Regev LWE public-key encryption (desk parameters, not for production).

Keys
    A  : m x n, uniform mod q, expanded from a 32-byte seed with SHAKE-128
    S  : n x ell secret, uniform mod q
    B  = A S + E mod q, with E uniform in [-error_bound, error_bound]

Each ciphertext carries ``ell`` message bits. With ``ell = 1`` this is the
textbook bitwise scheme (``pk = (A, b)`` with ``b`` an m-vector). Encryption
of a bit block ``x`` picks a random subset ``r`` of the m rows:

    u = r A,   v = r B + x * floor(q / 2)

and decryption rounds ``v - u S`` to the nearer of 0 and q/2. The scheme is
malleable: adding to ``v`` shifts the decrypted bit.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from ..errors import ConfigError, MalformedCiphertext

SECURITY_LEVELS = (80, 112, 128, 192, 256)
_CT_MAGIC = b"LWC1"
_PK_MAGIC = b"LWP1"
_SK_MAGIC = b"LWS1"


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, math.isqrt(n) + 1))


@dataclass(frozen=True)
class LweParams:
    n: int = 256
    q_mod: int = 4093
    error_bound: int = 1
    security_strength: int = 80
    m: int | None = None
    ell: int = 128

    def __post_init__(self):
        if not _is_prime(self.q_mod):
            raise ConfigError(f"modulus {self.q_mod} is not prime")
        if self.security_strength not in SECURITY_LEVELS:
            raise ConfigError(f"security strength must be one of {SECURITY_LEVELS}")
        if self.n < 1 or self.ell < 1 or self.error_bound < 0:
            raise ConfigError("LWE dimensions must be positive")
        if self.m is None:
            object.__setattr__(self, "m", 2 * self.n * math.ceil(math.log2(self.q_mod)))
        if self.failure_bound() >= 2.0**-32:
            raise ConfigError("error too large: per-bit decryption failure bound exceeds 2^-32")

    @property
    def coeff_bits(self) -> int:
        return math.ceil(math.log2(self.q_mod))

    def failure_bound(self) -> float:
        """Hoeffding bound on P(|<r, e>| >= q/4) for one decrypted bit."""
        if self.error_bound == 0:
            return 0.0
        t = self.q_mod / 4
        return 2.0 * math.exp(-(t * t) / (2.0 * self.m * self.error_bound**2))

    def ciphertext_bytes(self, message_bytes: int) -> int:
        blocks = max(1, -(-8 * message_bytes // self.ell))
        return len(_CT_MAGIC) + _CT_HEADER.size + _packed_len(blocks * (self.n + self.ell), self.coeff_bits)

    def expansion_factor(self, message_bytes: int) -> float:
        return self.ciphertext_bytes(message_bytes) / max(1, message_bytes)


_CT_HEADER = struct.Struct(">IHHHI")  # message bytes, n, ell, q, blocks
_PK_HEADER = struct.Struct(">HHIHH")  # n, q, m, ell, error_bound


def _packed_len(count: int, width: int) -> int:
    return -(-count * width // 8)


def pack_coeffs(values: np.ndarray, width: int) -> bytes:
    v = np.asarray(values, dtype=">u2").reshape(-1)
    bits = np.unpackbits(v.view(np.uint8).reshape(-1, 2), axis=1)[:, 16 - width :]
    return np.packbits(bits.reshape(-1)).tobytes()


def unpack_coeffs(data: bytes, count: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, np.uint8))[: count * width]
    if bits.size != count * width:
        raise MalformedCiphertext("truncated coefficient block")
    weights = (1 << np.arange(width - 1, -1, -1)).astype(np.int64)
    return bits.reshape(count, width).astype(np.int64) @ weights


@lru_cache(maxsize=8)
def expand_matrix(seed: bytes, rows: int, cols: int, q: int) -> np.ndarray:
    """Uniform ``rows x cols`` matrix mod q by rejection sampling a SHAKE-128 stream."""
    need = rows * cols
    width = math.ceil(math.log2(q))
    mask = (1 << width) - 1
    length = int(need * 1.1 * (1 << width) / q) + 64
    while True:
        raw = np.frombuffer(hashlib.shake_128(seed).digest(2 * length), dtype="<u2") & mask
        vals = raw[raw < q]
        if vals.size >= need:
            out = vals[:need].astype(np.int64).reshape(rows, cols)
            out.flags.writeable = False
            return out
        length *= 2


def _mod_matmul(x: np.ndarray, y: np.ndarray, q: int) -> np.ndarray:
    """``x @ y mod q`` for operands holding residues in ``[0, q)``."""
    # float64 products stay exact while inner_dim * (q - 1)^2 < 2^53
    if x.shape[1] * (q - 1) ** 2 >= 2**53:
        return (x.astype(object) @ y.astype(object) % q).astype(np.int64)
    xf = x if x.dtype == np.float64 else x.astype(np.float64)
    yf = y if y.dtype == np.float64 else y.astype(np.float64)
    return np.rint(xf @ yf).astype(np.int64) % q


@lru_cache(maxsize=8)
def _float_matrix(seed: bytes, rows: int, cols: int, q: int) -> np.ndarray:
    out = expand_matrix(seed, rows, cols, q).astype(np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PublicKey:
    params: LweParams
    seed_a: bytes
    b: np.ndarray  # m x ell

    @property
    def a(self) -> np.ndarray:
        p = self.params
        return expand_matrix(self.seed_a, p.m, p.n, p.q_mod)

    @cached_property
    def _float_b(self) -> np.ndarray:
        return self.b.astype(np.float64)

    def to_bytes(self) -> bytes:
        p = self.params
        head = _PK_HEADER.pack(p.n, p.q_mod, p.m, p.ell, p.error_bound)
        return _PK_MAGIC + head + bytes([p.security_strength]) + self.seed_a + pack_coeffs(self.b, p.coeff_bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if data[:4] != _PK_MAGIC:
            raise MalformedCiphertext("not an LWE public key")
        off = 4 + _PK_HEADER.size
        n, q, m, ell, eb = _PK_HEADER.unpack(data[4:off])
        params = LweParams(n=n, q_mod=q, error_bound=eb, security_strength=data[off], m=m, ell=ell)
        seed = data[off + 1 : off + 33]
        body = data[off + 33 :]
        if len(seed) != 32 or len(body) != _packed_len(m * ell, params.coeff_bits):
            raise MalformedCiphertext("public key has the wrong size")
        b = unpack_coeffs(body, m * ell, params.coeff_bits).reshape(m, ell)
        return cls(params, seed, b)


@dataclass(frozen=True)
class SecretKey:
    params: LweParams
    s: np.ndarray  # n x ell


def pq_keygen(params: LweParams, seed) -> tuple[PublicKey, SecretKey]:
    """Deterministic in ``seed`` (an int, SeedSequence or Generator)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = params
    seed_a = rng.bytes(32)
    a = expand_matrix(seed_a, p.m, p.n, p.q_mod)
    s = rng.integers(0, p.q_mod, size=(p.n, p.ell), dtype=np.int64)
    e = rng.integers(-p.error_bound, p.error_bound + 1, size=(p.m, p.ell), dtype=np.int64)
    b = (_mod_matmul(a, s, p.q_mod) + e) % p.q_mod
    return PublicKey(p, seed_a, b), SecretKey(p, s)


def encrypt_bits(bits: np.ndarray, pk: PublicKey, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Encrypt ``k * ell`` bits; returns ``(U, V)`` of shapes ``k x n`` and ``k x ell``."""
    p = pk.params
    x = np.asarray(bits, dtype=np.int64).reshape(-1, p.ell)
    r = rng.integers(0, 2, size=(x.shape[0], p.m), dtype=np.int64)
    u = _mod_matmul(r, _float_matrix(pk.seed_a, p.m, p.n, p.q_mod), p.q_mod)
    v = (_mod_matmul(r, pk._float_b, p.q_mod) + x * (p.q_mod // 2)) % p.q_mod
    return u, v


def decrypt_bits(u: np.ndarray, v: np.ndarray, sk: SecretKey) -> np.ndarray:
    q = sk.params.q_mod
    d = (v - _mod_matmul(u, sk.s, q)) % q
    return ((d > q // 4) & (d < q - q // 4)).astype(np.uint8).reshape(-1)


def pq_encrypt(message: bytes, pk: PublicKey, rng: np.random.Generator) -> bytes:
    p = pk.params
    bits = np.unpackbits(np.frombuffer(message, np.uint8))
    blocks = max(1, -(-bits.size // p.ell))
    padded = np.zeros(blocks * p.ell, np.uint8)
    padded[: bits.size] = bits
    u, v = encrypt_bits(padded, pk, rng)
    head = _CT_HEADER.pack(len(message), p.n, p.ell, p.q_mod, blocks)
    coeffs = np.concatenate([u, v], axis=1)
    return _CT_MAGIC + head + pack_coeffs(coeffs, p.coeff_bits)


def parse_ciphertext(data: bytes, params: LweParams) -> tuple[int, np.ndarray, np.ndarray]:
    p = params
    if data[:4] != _CT_MAGIC or len(data) < 4 + _CT_HEADER.size:
        raise MalformedCiphertext("missing LWE ciphertext header")
    length, n, ell, q, blocks = _CT_HEADER.unpack(data[4 : 4 + _CT_HEADER.size])
    if (n, ell, q) != (p.n, p.ell, p.q_mod):
        raise MalformedCiphertext("ciphertext dimensions do not match the key")
    if 8 * length > blocks * ell:
        raise MalformedCiphertext("declared length exceeds the encrypted blocks")
    body = data[4 + _CT_HEADER.size :]
    if len(body) != _packed_len(blocks * (n + ell), p.coeff_bits):
        raise MalformedCiphertext("ciphertext body has the wrong size")
    coeffs = unpack_coeffs(body, blocks * (n + ell), p.coeff_bits).reshape(blocks, n + ell)
    if np.any(coeffs >= q):
        raise MalformedCiphertext("coefficient out of range")
    return length, coeffs[:, :n], coeffs[:, n:]


def pq_decrypt(ciphertext: bytes, sk: SecretKey) -> bytes:
    length, u, v = parse_ciphertext(ciphertext, sk.params)
    bits = decrypt_bits(u, v, sk)[: 8 * length]
    return np.packbits(bits).tobytes()
