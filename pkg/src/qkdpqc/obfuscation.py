"""Instruction-sequence obfuscation and layered (sequential) encryption.

An instruction sequence (IS) is an ordered list of primitives applied to the
data message. A public mapping table assigns each IS a short identifier; the
identifier travels masked with one-time PSK bits (``pi``).

Every layer is self-delimiting, so no separate manifest is sent:

* OTP keeps the length,
* AES prepends its 16-byte counter block,
* PQ_Enc emits a header with the plaintext length and dimensions.

Key material is always resolved outermost layer first. The receiver needs
this order to peel layers, and the sender follows it because every layer's
output size is known in advance. Both pools therefore advance identically
even when a primitive repeats.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    LayerFailure,
    MissingPublicKey,
    QkdPqcError,
    UnknownIdentifier,
    VersionMismatch,
)
from .primitives.aes import NONCE_BYTES, AesChannel
from .primitives.keys import PskLedger, QkdKeyPool
from .primitives.lwe import LweParams, PublicKey, SecretKey, pq_decrypt, pq_encrypt
from .primitives.otp import xor_bytes

TABLE_VERSION = 1


class Primitive(enum.Enum):
    OTP = "OTP"
    AES = "AES"
    PQ_ENC = "PQ_Enc"


@dataclass(frozen=True)
class InstructionSequence:
    steps: tuple[Primitive, ...]

    def __post_init__(self):
        if not self.steps:
            raise ConfigError("an instruction sequence needs at least one step")

    def __len__(self) -> int:
        return len(self.steps)

    def __contains__(self, item: Primitive) -> bool:
        return item in self.steps

    def count(self, item: Primitive) -> int:
        return self.steps.count(item)

    def canonical(self) -> str:
        return ",".join(p.value for p in self.steps)

    @classmethod
    def parse(cls, text: str) -> "InstructionSequence":
        try:
            return cls(tuple(Primitive(tok.strip()) for tok in text.split(",")))
        except ValueError as exc:
            raise ConfigError(f"unknown primitive in '{text}'") from exc

    def reversed(self) -> "InstructionSequence":
        return InstructionSequence(self.steps[::-1])


@dataclass(frozen=True)
class EncryptedIdentifier:
    pi: str  # bit string of width N_obs_hat

    def to_bytes(self) -> bytes:
        return self.pi.encode("ascii")


def _bits_str(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def _xor_str(a: str, b: str) -> str:
    return "".join("1" if x != y else "0" for x, y in zip(a, b))


@dataclass(frozen=True)
class MappingTable:
    """Public bijection between identifiers (bit strings) and sequences."""

    entries: tuple[tuple[str, InstructionSequence], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if not ids:
            raise ConfigError("mapping table is empty")
        width = len(ids[0])
        if any(len(i) != width or set(i) - {"0", "1"} for i in ids):
            raise ConfigError("identifiers must be bit strings of equal width")
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate identifier in mapping table")
        seqs = [s.canonical() for _, s in self.entries]
        if len(set(seqs)) != len(seqs):
            raise ConfigError("mapping table is not bijective")

    @property
    def width(self) -> int:
        return len(self.entries[0][0])

    @property
    def identifiers(self) -> list[str]:
        return [i for i, _ in self.entries]

    def lookup(self, identifier: str) -> InstructionSequence:
        for i, s in self.entries:
            if i == identifier:
                return s
        raise UnknownIdentifier(f"identifier '{identifier}' is not in the table")

    def identifier_of(self, seq: InstructionSequence) -> str:
        for i, s in self.entries:
            if s == seq:
                return i
        raise UnknownIdentifier(f"sequence {seq.canonical()} is not in the table")

    def dumps(self) -> str:
        lines = [f"version {TABLE_VERSION}", f"bits {self.width}"]
        lines += [f"{i} -> {s.canonical()}" for i, s in self.entries]
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "MappingTable":
        version, width, entries = None, None, []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("version"):
                version = int(line.split()[1])
            elif line.startswith("bits"):
                width = int(line.split()[1])
            elif line.startswith("digest"):
                continue
            else:
                ident, _, seq = line.partition("->")
                if not seq:
                    raise ConfigError(f"cannot parse table line '{raw}'")
                entries.append((ident.strip(), InstructionSequence.parse(seq)))
        if version != TABLE_VERSION:
            raise VersionMismatch(f"mapping table version {version}, expected {TABLE_VERSION}")
        table = cls(tuple(entries))
        if width is not None and width != table.width:
            raise ConfigError("declared identifier width does not match the entries")
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + f"digest {self.digest}\n")

    @classmethod
    def load(cls, path: str | Path) -> "MappingTable":
        text = Path(path).read_text()
        table = cls.loads(text)
        pinned = [ln.split()[1] for ln in text.splitlines() if ln.startswith("digest")]
        if pinned and pinned[0] != table.digest:
            raise ConfigError("mapping table digest does not match its contents")
        return table


DEFAULT_TABLE = MappingTable(
    (
        ("00", InstructionSequence.parse("OTP,AES")),
        ("01", InstructionSequence.parse("AES,OTP")),
        ("10", InstructionSequence.parse("OTP,PQ_Enc")),
        ("11", InstructionSequence.parse("PQ_Enc,OTP")),
    )
)


def generate_table(width: int, max_len: int, seed: int) -> MappingTable:
    """Random table with ``2**width`` distinct sequences of length 1..max_len."""
    rng = np.random.default_rng(seed)
    prims = list(Primitive)
    pool = [seq for n in range(1, max_len + 1) for seq in itertools.product(prims, repeat=n)]
    if len(pool) < 2**width:
        raise ConfigError("not enough distinct sequences for the requested width")
    chosen = rng.choice(len(pool), size=2**width, replace=False)
    ids = [format(i, f"0{width}b") for i in range(2**width)]
    return MappingTable(tuple((i, InstructionSequence(pool[c])) for i, c in zip(ids, chosen)))


# -- identifier exchange ------------------------------------------------------


def derive_is(
    ledger: PskLedger,
    table: MappingTable,
    choice: str | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[InstructionSequence, EncryptedIdentifier]:
    """Pick an IS (uniformly unless ``choice`` is given) and mask its identifier."""
    if choice is None:
        rng = rng if rng is not None else np.random.default_rng()
        choice = table.identifiers[int(rng.integers(len(table.entries)))]
    seq = table.lookup(choice)
    mask = _bits_str(ledger.take_bits("pi", table.width))
    return seq, EncryptedIdentifier(_xor_str(choice, mask))


def decode_is(pi: EncryptedIdentifier, ledger: PskLedger, table: MappingTable) -> InstructionSequence:
    if len(pi.pi) != table.width:
        raise UnknownIdentifier("encrypted identifier has the wrong width")
    mask = _bits_str(ledger.take_bits("pi", table.width))
    return table.lookup(_xor_str(pi.pi, mask))


# -- sequential encryption ----------------------------------------------------


@dataclass
class KeyBundle:
    """Key material for one run of sequential encryption or decryption.

    ``aes_key_source`` is called once per AES layer and must return 32 bytes.
    ``rng`` drives PQ encryption randomness and AES nonces (sender side).
    """

    pool: QkdKeyPool | None = None
    aes_key_source: Callable[[], bytes] | None = None
    public_key: PublicKey | None = None
    secret_key: SecretKey | None = None
    rng: np.random.Generator | None = None
    _channels: dict[bytes, AesChannel] = field(default_factory=dict, repr=False)

    def channel(self, key: bytes) -> AesChannel:
        if key not in self._channels:
            rng = self.rng if self.rng is not None else np.random.default_rng()
            self._channels[key] = AesChannel(key, nonce_source=rng.bytes)
        return self._channels[key]

    def otp_key(self, n_bytes: int) -> bytes:
        if self.pool is None:
            raise ConfigError("an OTP layer needs a QKD key pool")
        return self.pool.take_bytes(n_bytes)

    def aes_key(self) -> bytes:
        if self.aes_key_source is None:
            raise ConfigError("an AES layer needs an AES key source")
        return self.aes_key_source()


@dataclass(frozen=True)
class LayerRecord:
    primitive: Primitive
    input_size: int
    output_size: int
    output: bytes


def layer_sizes(seq: InstructionSequence, message_size: int, params: LweParams | None) -> list[int]:
    """Output size after each layer (encryption order)."""
    sizes, n = [], message_size
    for prim in seq.steps:
        if prim is Primitive.AES:
            n += NONCE_BYTES
        elif prim is Primitive.PQ_ENC:
            if params is None:
                raise MissingPublicKey("IS contains PQ_Enc but no public key was exchanged")
            n = params.ciphertext_bytes(n)
        sizes.append(n)
    return sizes


def otp_demand_bytes(seq: InstructionSequence, message_size: int, params: LweParams | None) -> int:
    """Pool bytes consumed by the OTP layers of ``seq``."""
    sizes = layer_sizes(seq, message_size, params)
    inputs = [message_size] + sizes[:-1]
    return sum(n for prim, n in zip(seq.steps, inputs) if prim is Primitive.OTP)


def _resolve_outermost_first(seq: InstructionSequence, inputs: list[int], keys: KeyBundle) -> list:
    resolved = [None] * len(seq)
    for i in reversed(range(len(seq))):
        prim = seq.steps[i]
        if prim is Primitive.OTP:
            resolved[i] = keys.otp_key(inputs[i])
        elif prim is Primitive.AES:
            resolved[i] = keys.aes_key()
    return resolved


def seq_encrypt_layers(message: bytes, seq: InstructionSequence, keys: KeyBundle) -> list[LayerRecord]:
    """Fold the IS over ``message`` and keep every intermediate ciphertext."""
    if Primitive.PQ_ENC in seq and keys.public_key is None:
        raise MissingPublicKey("IS contains PQ_Enc but no public key was exchanged")
    sizes = layer_sizes(seq, len(message), keys.public_key.params if keys.public_key else None)
    inputs = [len(message)] + sizes[:-1]
    resolved = _resolve_outermost_first(seq, inputs, keys)
    rng = keys.rng if keys.rng is not None else np.random.default_rng()
    records, cur = [], message
    for prim, key in zip(seq.steps, resolved):
        before = len(cur)
        if prim is Primitive.OTP:
            cur = xor_bytes(cur, key)
        elif prim is Primitive.AES:
            cur = keys.channel(key).encrypt(cur)
        else:
            cur = pq_encrypt(cur, keys.public_key, rng)
        records.append(LayerRecord(prim, before, len(cur), cur))
    return records


def seq_encrypt(message: bytes, seq: InstructionSequence, keys: KeyBundle) -> bytes:
    return seq_encrypt_layers(message, seq, keys)[-1].output


def seq_decrypt(ciphertext: bytes, seq: InstructionSequence, keys: KeyBundle) -> bytes:
    """Undo the IS right to left; failures name the layer (1-based, encryption order)."""
    cur = ciphertext
    for i in reversed(range(len(seq))):
        prim = seq.steps[i]
        try:
            if prim is Primitive.OTP:
                cur = xor_bytes(cur, keys.otp_key(len(cur)))
            elif prim is Primitive.AES:
                cur = keys.channel(keys.aes_key()).decrypt(cur)
            else:
                if keys.secret_key is None:
                    raise MissingPublicKey("IS contains PQ_Dec but no secret key is held")
                cur = pq_decrypt(cur, keys.secret_key)
        except (QkdPqcError, ValueError) as exc:
            raise LayerFailure(i + 1, exc) from exc
    return cur
