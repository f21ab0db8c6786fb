"""Two-party session: one QKD-PQC cycle per ``run_cycle`` call.

Alice receives data, Bob sends it. A hybrid cycle runs

1. handshake: HELLO and CONFIG both ways, then both reserve 256 bits of the
   AES partition for classical traffic;
2. obfuscation: Bob picks an IS and sends its masked identifier (PI);
3. QKD derivation: one or more sessions of tag exchange, synchronization,
   filtering, sifting, QBER sampling, syndrome reconciliation and privacy
   amplification, each growing the shared key pool;
4. auxiliary keys: an LWE key pair from Alice when the IS needs PQ_Enc;
5. data transfer: layered encryption at Bob, decryption at Alice.

Baseline mode skips steps 2 and 4, sends all QKD traffic in cleartext and
encrypts the message with OTP only.

Bob decides when the session loop ends and announces it in PA_SEED. The loop
runs ``min_sessions`` times, then continues until the pool covers the
pending OTP demand, up to ``max_sessions``.
"""
from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    AuthenticationFailure,
    DecodeFailure,
    DigestMismatch,
    InsufficientBits,
    PeerAbort,
    ProtocolError,
    QkdPqcError,
    VersionMismatch,
)
from ..obfuscation import (
    DEFAULT_TABLE,
    EncryptedIdentifier,
    InstructionSequence,
    KeyBundle,
    MappingTable,
    Primitive,
    decode_is,
    derive_is,
    otp_demand_bytes,
    seq_decrypt,
    seq_encrypt,
)
from ..postproc.amplification import privacy_amplify
from ..postproc.keyrate import key_rate
from ..postproc.mac import TAG_BYTES, wc_mac_tag, wc_mac_verify
from ..postproc.reconcile import block_codes, block_syndromes, plan_blocks, reconcile
from ..postproc.sifting import raw_records, sample_positions, sift
from ..primitives.aes import AesChannel
from ..primitives.keys import PskLedger, QkdKeyPool, bits_to_bytes
from ..primitives.lwe import PublicKey, pq_keygen
from ..primitives.otp import otp_decrypt, otp_encrypt
from ..source import duration_for, generate
from ..sync import SyncState, run_sync
from ..timetag import S, Party, TagStream, match_pairs
from .config import PROTOCOL_VERSION, SystemConfig
from .metrics import CycleMetrics
from .wire import MsgType, Transport, WireMessage, pack_body, unpack_body

MAC_KEY_BYTES = 16


class Phase(enum.Enum):
    HANDSHAKE = "Handshake"
    OBFUSCATION = "Obfuscation"
    QKD_DERIVATION = "QkdDerivation"
    AUX_KEYS = "AuxKeys"
    DATA_TRANSFER = "DataTransfer"
    DONE = "Done"
    ABORTED = "Aborted"


TRANSITIONS = {
    None: {Phase.HANDSHAKE},
    Phase.HANDSHAKE: {Phase.OBFUSCATION, Phase.QKD_DERIVATION},
    Phase.OBFUSCATION: {Phase.QKD_DERIVATION},
    Phase.QKD_DERIVATION: {Phase.AUX_KEYS, Phase.DATA_TRANSFER},
    Phase.AUX_KEYS: {Phase.DATA_TRANSFER},
    Phase.DATA_TRANSFER: {Phase.DONE},
    Phase.DONE: set(),
    Phase.ABORTED: set(),
}

_HYBRID_DISPOSITION = {
    MsgType.PI: "otp",
    MsgType.TAGS: "aes",
    MsgType.BASES: "aes",
    MsgType.QBER_SAMPLE: "aes",
    MsgType.SYNDROME: "aes",
    MsgType.PA_SEED: "aes",
    MsgType.DATA: "seq",
}
_BASELINE_DISPOSITION = {MsgType.DATA: "otp"}


def disposition(kind: MsgType, mode: str) -> str:
    table = _HYBRID_DISPOSITION if mode == "hybrid" else _BASELINE_DISPOSITION
    return table.get(kind, "cleartext")


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str  # "send" or "recv"
    type: MsgType
    disposition: str
    frame: bytes


@dataclass
class SessionRecord:
    index: int
    qber: float
    n_coincidences: int
    n_sifted: int
    n_reconciled: int
    r: float
    final_len: int
    key_digest: str
    key: np.ndarray | None = None


@dataclass
class CycleOutcome:
    role: str
    cycle_index: int
    ok: bool
    metrics: CycleMetrics
    phases: list[Phase]
    sessions: list[SessionRecord] = field(default_factory=list)
    sequence: InstructionSequence | None = None
    delivered: bytes | None = None
    error: Exception | None = None
    quarantined: int = 0


def _timing_view(ticks: np.ndarray, party: Party) -> TagStream:
    # a peer's tags arrive without detector ids; a fixed id keeps TagStream happy
    det = 1 if party is Party.ALICE else 5
    return TagStream(ticks, np.full(ticks.size, det, np.uint8), party)


def _ticks_blob(ticks: np.ndarray) -> bytes:
    return np.asarray(ticks, dtype="<i8").tobytes()


def _blob_ticks(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<i8").astype(np.int64)


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _unpack_bits(blob: bytes, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(blob, np.uint8))[:n]
    if bits.size != n:
        raise ProtocolError("bit payload shorter than declared")
    return bits


class QuantumLink:
    """Seeded stand-in for the photon source and quantum channel.

    Sessions are laid end to end in simulated time, so clock offset and drift
    evolve continuously across sessions and cycles. Each party receives only
    its own detections.
    """

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.duration = duration_for(cfg.source, cfg.n_raw)
        self._cache: dict[int, tuple[TagStream, TagStream]] = {}
        self._lock = threading.Lock()

    def start_time(self, index: int) -> int:
        return int(self.cfg.source.start_time + index * round(self.duration * S))

    def session_seed(self, index: int) -> int:
        ss = np.random.SeedSequence([self.cfg.source.seed, self.cfg.seed, index])
        return int(ss.generate_state(1, np.uint64)[0])

    def acquire(self, party: Party, index: int) -> TagStream:
        with self._lock:
            if index not in self._cache:
                src = self.cfg.source.with_(
                    duration=self.duration, start_time=self.start_time(index), seed=self.session_seed(index)
                )
                alice, bob, _ = generate(src)
                self._cache[index] = (alice, bob)
                for old in [k for k in self._cache if k < index - 2]:
                    del self._cache[old]
            return self._cache[index][int(party)]


class PartyEndpoint:
    """One party's long-lived state: ledgers and pools survive across cycles."""

    def __init__(
        self,
        role: Party,
        cfg: SystemConfig,
        transport: Transport,
        ledger: PskLedger,
        table: MappingTable = DEFAULT_TABLE,
        link: QuantumLink | None = None,
        keep_keys: bool = False,
    ):
        self.role = role
        self.cfg = cfg
        self.transport = transport
        self.ledger = ledger
        self.table = table
        self.link = link or QuantumLink(cfg)
        self.keep_keys = keep_keys
        self.pool = QkdKeyPool()
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 7, int(role)])))
        self.transcript: list[TranscriptEntry] = []
        self.cycle_index = 0
        self.session_index = 0
        self.sync_state: SyncState | None = None
        self.phase: Phase | None = None
        # test hooks: called with a step label before each step; skipped steps
        self.fault = None
        self.skip: set[str] = set()
        # set to a list to record (type, plaintext body) of every sent frame
        self.plain_log: list[tuple[MsgType, bytes]] | None = None
        self._channel: AesChannel | None = None
        self._metrics: CycleMetrics | None = None
        self._phases: list[Phase] = []

    @property
    def name(self) -> str:
        return "alice" if self.role is Party.ALICE else "bob"

    @property
    def mode(self) -> str:
        return self.cfg.mode

    # -- plumbing ----------------------------------------------------------

    def _advance(self, phase: Phase) -> None:
        if phase not in TRANSITIONS[self.phase]:
            raise ProtocolError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase
        self._phases.append(phase)

    def _checkpoint(self, label: str) -> None:
        if self.fault is not None:
            self.fault(label)

    def _send(self, kind: MsgType, header: dict | None = None, blob: bytes = b"") -> bytes:
        body = pack_body(header, blob)
        if self.plain_log is not None:
            self.plain_log.append((kind, body))
        disp = disposition(kind, self.mode)
        if disp == "aes":
            body = self._channel.encrypt(body)
        self._send_raw(kind, body, disp)
        return body

    def _send_raw(self, kind: MsgType, body: bytes, disp: str) -> None:
        msg = WireMessage(kind, body, disp)
        with self._metrics.timed("Classical Communications"):
            self.transport.send(msg)
        self.transcript.append(TranscriptEntry("send", kind, disp, msg.encode()))

    def _recv_raw(self, kind: MsgType) -> bytes:
        with self._metrics.timed("Classical Communications"):
            msg = self.transport.recv(timeout=self.cfg.recv_timeout)
        self.transcript.append(TranscriptEntry("recv", msg.type, disposition(msg.type, self.mode), msg.encode()))
        if msg.type is MsgType.ABORT:
            reason = unpack_body(msg.body)[0].get("reason", "")
            raise PeerAbort(f"peer aborted: {reason}")
        if msg.type is not kind:
            raise ProtocolError(f"expected {kind.name}, received {msg.type.name}")
        return msg.body

    def _recv(self, kind: MsgType) -> tuple[dict, bytes, bytes]:
        """``(header, blob, wire_body)`` of the next frame, which must be ``kind``."""
        wire = self._recv_raw(kind)
        body = self._channel.decrypt(wire) if disposition(kind, self.mode) == "aes" else wire
        header, blob = unpack_body(body)
        return header, blob, wire

    def _mac_key(self) -> bytes:
        """Fresh WC-MAC key: PSK authentication bits first, grown QKD key once those run out."""
        if self.ledger.remaining_bits("auth") >= 8 * MAC_KEY_BYTES:
            return self.ledger.take_bytes("auth", MAC_KEY_BYTES)
        return self.pool.take_bytes(MAC_KEY_BYTES)

    def _aes_data_key(self) -> bytes:
        return self.ledger.take_bytes("aes", self.cfg.n_aes_bits // 8)

    # -- cycle -------------------------------------------------------------

    def run_cycle(self, message: bytes = b"") -> CycleOutcome:
        """Run one cycle; Bob passes the message, Alice gets it in ``delivered``."""
        self._metrics = CycleMetrics(self.name, self.mode)
        self._phases = []
        self.phase = None
        self._channel = None
        mark = self.pool.mark()
        sessions: list[SessionRecord] = []
        ctx = {"sequence": None}
        try:
            delivered = self._cycle(message, sessions, ctx)
            self._advance(Phase.DONE)
            return CycleOutcome(
                self.name, self.cycle_index, True, self._metrics, list(self._phases),
                sessions, ctx["sequence"], delivered,
            )
        except Exception as exc:  # any failure aborts the cycle
            if not isinstance(exc, (PeerAbort, QkdPqcError)):
                exc = ProtocolError(f"internal error: {exc!r}")
            if not isinstance(exc, PeerAbort):
                try:
                    self._send_raw(MsgType.ABORT, pack_body({"reason": type(exc).__name__}), "cleartext")
                except QkdPqcError:
                    pass
            self.phase = Phase.ABORTED
            self._phases.append(Phase.ABORTED)
            lost = self.pool.quarantine_since(mark)
            return CycleOutcome(
                self.name, self.cycle_index, False, self._metrics, list(self._phases),
                sessions, ctx["sequence"], None, exc, lost,
            )
        finally:
            self.cycle_index += 1

    def _cycle(self, message: bytes, sessions: list, ctx: dict) -> bytes | None:
        bob = self.role is Party.BOB
        hybrid = self.mode == "hybrid"

        self._advance(Phase.HANDSHAKE)
        self._checkpoint("handshake")
        self._handshake()

        seq = None
        if hybrid:
            self._advance(Phase.OBFUSCATION)
            self._checkpoint("obfuscation")
            seq = self._obfuscation()
            ctx["sequence"] = seq

        demand = 0
        if bob:
            if hybrid:
                otp_bytes = otp_demand_bytes(seq, len(message), self.cfg.lwe)
            else:
                otp_bytes = len(message)
            demand = 8 * otp_bytes

        self._advance(Phase.QKD_DERIVATION)
        count = 0
        while True:
            self._checkpoint("qkd_session")
            record, more = self._qkd_session(count, demand)
            sessions.append(record)
            count += 1
            if not more:
                break

        pk = sk = None
        if hybrid:
            self._advance(Phase.AUX_KEYS)
            self._checkpoint("aux_keys")
            if Primitive.PQ_ENC in seq and "pq_share" not in self.skip:
                pk, sk = self._pq_share()

        self._advance(Phase.DATA_TRANSFER)
        self._checkpoint("data")
        if bob:
            self._send_data(message, seq, pk)
            return None
        return self._recv_data(seq, sk)

    # -- step 1 ------------------------------------------------------------

    def _handshake(self) -> None:
        self._send(MsgType.HELLO, {"version": PROTOCOL_VERSION, "cycle": self.cycle_index, "role": self.name})
        hello, _, _ = self._recv(MsgType.HELLO)
        if hello.get("version") != PROTOCOL_VERSION:
            raise VersionMismatch(f"peer speaks protocol version {hello.get('version')}")
        if hello.get("cycle") != self.cycle_index:
            raise ProtocolError(f"HELLO for cycle {hello.get('cycle')} during cycle {self.cycle_index} (replay?)")
        mine = {"config": self.cfg.digest, "table": self.table.digest, "mode": self.mode}
        self._send(MsgType.CONFIG, mine)
        theirs, _, _ = self._recv(MsgType.CONFIG)
        if theirs.get("mode") != self.mode:
            raise DigestMismatch("peer runs a different mode")
        if theirs.get("table") != self.table.digest:
            raise DigestMismatch("mapping table digest differs from the peer's")
        if theirs.get("config") != self.cfg.digest:
            raise DigestMismatch("system configuration differs from the peer's")
        if self.mode == "hybrid":
            self._channel = AesChannel(self._aes_data_key(), nonce_source=self.rng.bytes)

    # -- step 2 ------------------------------------------------------------

    def _obfuscation(self) -> InstructionSequence:
        if self.role is Party.BOB:
            with self._metrics.timed("Obfuscation"):
                seq, pi = derive_is(self.ledger, self.table, self.cfg.choice or None, self.rng)
            self._send(MsgType.PI, {"pi": pi.pi})
            return seq
        header, _, _ = self._recv(MsgType.PI)
        with self._metrics.timed("Obfuscation"):
            return decode_is(EncryptedIdentifier(str(header["pi"])), self.ledger, self.table)

    # -- step 3 ------------------------------------------------------------

    def _qkd_session(self, count: int, demand: int) -> tuple[SessionRecord, bool]:
        index = self.session_index
        self.session_index += 1
        own = self.link.acquire(self.role, index)
        # acquisition is emulated: stamp the nominal acquisition time
        self._metrics.add("Signal Accumulation", self.link.duration)
        if self.role is Party.BOB:
            return self._bob_session(index, own, count, demand)
        record = self._alice_session(index, own)
        return record, self._last_continue

    def _bob_session(self, index: int, own: TagStream, count: int, demand: int) -> tuple[SessionRecord, bool]:
        cfg = self.cfg
        _, blob, _ = self._recv(MsgType.TAGS)
        alice_view = _timing_view(_blob_ticks(blob), Party.ALICE)
        with self._metrics.timed("Synchronization"):
            result = run_sync(alice_view, own, cfg.sync, origin=self.link.start_time(index), initial=self.sync_state)
            self.sync_state = result.final_state
            aligned = result.aligned
        self._send(MsgType.TAGS, None, _ticks_blob(aligned.ticks))

        with self._metrics.timed("Time Tag Filtering"):
            ia, ib = match_pairs(alice_view, aligned, cfg.window)
            ib = ib[: cfg.n_raw]
        with self._metrics.timed("Sifting"):
            bases_b, bits_b = raw_records(aligned, ib)
        self._send(MsgType.BASES, {"n": int(bases_b.size)}, _pack_bits(bases_b))
        header, blob, _ = self._recv(MsgType.BASES)
        with self._metrics.timed("Sifting"):
            bases_a = _unpack_bits(blob, int(header["n"]))
            if bases_a.size != bases_b.size:
                raise ProtocolError("basis records differ in length")
            kb = sift(bases_b, bits_b, bases_a)
        n_sifted = len(kb)

        with self._metrics.timed("QBER Estimation"):
            size = min(cfg.n_raw // 4, len(kb))
            pos = sample_positions(len(kb), size, self.rng)
        self._send(MsgType.QBER_SAMPLE, {"n": int(size)}, pos.astype("<u4").tobytes() + _pack_bits(kb.bits[pos]))
        _, blob, _ = self._recv(MsgType.QBER_SAMPLE)
        with self._metrics.timed("QBER Estimation"):
            theirs = _unpack_bits(blob, size)
            q = float(np.count_nonzero(theirs != kb.bits[pos])) / size if size else 0.5
            kb = kb.without(pos)

        with self._metrics.timed("Error Correction"):
            sizes = []
            if q <= cfg.qber_limit:
                try:
                    sizes = plan_blocks(len(kb))
                except InsufficientBits:
                    sizes = []
            codes = block_codes(sizes)
            bits = kb.bits[: sum(sizes)]
            syn = block_syndromes(bits, codes)
            syn_blob = _pack_bits(np.concatenate(syn)) if syn else b""
        wire = self._send(MsgType.SYNDROME, {"sizes": sizes, "q": q}, syn_blob)
        self._send(MsgType.MAC, {"of": "SYNDROME"}, wc_mac_tag(wire, self._mac_key()))
        header, tag, _ = self._recv(MsgType.MAC)
        with self._metrics.timed("Error Correction"):
            flags = [int(bool(f)) for f in header.get("accepted", [])]
            if len(flags) != len(sizes):
                raise ProtocolError("verification covers the wrong number of blocks")
            kept = _accepted_bits(bits, sizes, flags)
            if not wc_mac_verify(bytes(flags) + _pack_bits(kept), tag, self._mac_key()):
                flags = [0] * len(sizes)
                kept = kept[:0]

        rate = codes[0].rate if codes else 0.5
        report = key_rate(q, rate, n=int(kept.size), qber_limit=cfg.qber_limit)
        final_len = report.final_len if kept.size else 0
        pa_seed = int(self.rng.integers(0, 2**63))
        done = count + 1
        grown = self.pool.available + final_len
        need = demand + (0 if self.ledger.remaining_bits("auth") >= 8 * MAC_KEY_BYTES else 8 * MAC_KEY_BYTES)
        more = done < cfg.min_sessions or (grown < need and done < cfg.max_sessions)
        self._send(
            MsgType.PA_SEED,
            {"accepted": flags, "seed": pa_seed, "final_len": final_len, "continue": more},
        )
        with self._metrics.timed("Privacy Amplification"):
            key = privacy_amplify(kept, report.r, pa_seed) if final_len else np.zeros(0, np.uint8)
            self.pool.append(key)
        record = self._record(index, q, int(ib.size), n_sifted, int(kept.size), report.r if final_len else 0.0, key)
        return record, more

    def _alice_session(self, index: int, own: TagStream) -> SessionRecord:
        cfg = self.cfg
        self._send(MsgType.TAGS, None, _ticks_blob(own.ticks))
        _, blob, _ = self._recv(MsgType.TAGS)
        bob_view = _timing_view(_blob_ticks(blob), Party.BOB)
        with self._metrics.timed("Time Tag Filtering"):
            ia, _ = match_pairs(own, bob_view, cfg.window)
            ia = ia[: cfg.n_raw]
        with self._metrics.timed("Sifting"):
            bases_a, bits_a = raw_records(own, ia)
        self._send(MsgType.BASES, {"n": int(bases_a.size)}, _pack_bits(bases_a))
        header, blob, _ = self._recv(MsgType.BASES)
        with self._metrics.timed("Sifting"):
            bases_b = _unpack_bits(blob, int(header["n"]))
            if bases_a.size != bases_b.size:
                raise ProtocolError("basis records differ in length")
            ka = sift(bases_a, bits_a, bases_b)
        n_sifted = len(ka)

        header, blob, _ = self._recv(MsgType.QBER_SAMPLE)
        with self._metrics.timed("QBER Estimation"):
            size = int(header["n"])
            pos = np.frombuffer(blob[: 4 * size], dtype="<u4").astype(np.int64)
            if pos.size != size or (size and (pos.max() >= len(ka) or np.any(np.diff(pos) <= 0))):
                raise ProtocolError("malformed QBER sample positions")
            theirs = _unpack_bits(blob[4 * size :], size)
            mine = ka.bits[pos]
            q = float(np.count_nonzero(theirs != mine)) / size if size else 0.5
            ka = ka.without(pos)
        self._send(MsgType.QBER_SAMPLE, {}, _pack_bits(mine))

        header, blob, wire = self._recv(MsgType.SYNDROME)
        _, tag, _ = self._recv(MsgType.MAC)
        if not wc_mac_verify(wire, tag, self._mac_key()):
            raise AuthenticationFailure("syndrome message failed authentication")
        with self._metrics.timed("Error Correction"):
            sizes = [int(s) for s in header["sizes"]]
            codes = block_codes(sizes)
            syn_all = _unpack_bits(blob, sum(c.m for c in codes))
            bits = ka.bits[: sum(sizes)]
            if bits.size != sum(sizes):
                raise ProtocolError("peer planned more blocks than the sifted key holds")
            corrected, flags, pos_bits, pos_syn = [], [], 0, 0
            for code in codes:
                target = syn_all[pos_syn : pos_syn + code.m]
                try:
                    corrected.append(reconcile(bits[pos_bits : pos_bits + code.n], target, q, code, cfg.max_iterations))
                    flags.append(1)
                except DecodeFailure:
                    corrected.append(bits[pos_bits : pos_bits + code.n])
                    flags.append(0)
                pos_bits += code.n
                pos_syn += code.m
            fixed = np.concatenate(corrected) if corrected else bits[:0]
            kept = _accepted_bits(fixed, sizes, flags)
        self._send(MsgType.MAC, {"accepted": flags}, wc_mac_tag(bytes(flags) + _pack_bits(kept), self._mac_key()))

        header, _, _ = self._recv(MsgType.PA_SEED)
        final_flags = [int(f) for f in header["accepted"]]
        if final_flags != flags:
            kept = kept[:0] if not any(final_flags) else _accepted_bits(fixed, sizes, final_flags)
        rate = codes[0].rate if codes else 0.5
        report = key_rate(q, rate, n=int(kept.size), qber_limit=cfg.qber_limit)
        final_len = report.final_len if kept.size else 0
        if final_len != int(header["final_len"]):
            raise ProtocolError("peer computed a different final key length")
        with self._metrics.timed("Privacy Amplification"):
            key = privacy_amplify(kept, report.r, int(header["seed"])) if final_len else np.zeros(0, np.uint8)
            self.pool.append(key)
        self._last_continue = bool(header["continue"])
        return self._record(index, q, int(ia.size), n_sifted, int(kept.size), report.r if final_len else 0.0, key)

    def _record(self, index, q, n_coinc, n_sifted, n_rec, r, key) -> SessionRecord:
        return SessionRecord(
            index=index,
            qber=q,
            n_coincidences=n_coinc,
            n_sifted=n_sifted,
            n_reconciled=n_rec,
            r=r,
            final_len=int(key.size),
            key_digest=hashlib.sha256(bits_to_bytes(key) + key.size.to_bytes(8, "big")).hexdigest(),
            key=key.copy() if self.keep_keys else None,
        )

    # -- step 4 ------------------------------------------------------------

    def _pq_share(self):
        if self.role is Party.ALICE:
            with self._metrics.timed("PQC Key Share"):
                pk, sk = pq_keygen(self.cfg.lwe, self.rng)
                body = pk.to_bytes()
            self._send_raw(MsgType.PQ_PUBKEY, body, "cleartext")
            return pk, sk
        body = self._recv_raw(MsgType.PQ_PUBKEY)
        with self._metrics.timed("PQC Key Share"):
            pk = PublicKey.from_bytes(body)
            if pk.params != self.cfg.lwe:
                raise ProtocolError("peer public key uses unexpected parameters")
        return pk, None

    # -- step 5 ------------------------------------------------------------

    def _send_data(self, message: bytes, seq: InstructionSequence | None, pk) -> None:
        mac_key = self._mac_key()
        with self._metrics.timed("Message Enc-Dec"):
            if seq is None:
                ct = otp_encrypt(message, self.pool)
            else:
                keys = KeyBundle(pool=self.pool, aes_key_source=self._aes_data_key, public_key=pk, rng=self.rng)
                ct = seq_encrypt(message, seq, keys)
        body = ct + wc_mac_tag(ct, mac_key)
        self._send_raw(MsgType.DATA, body, disposition(MsgType.DATA, self.mode))

    def _recv_data(self, seq: InstructionSequence | None, sk) -> bytes:
        body = self._recv_raw(MsgType.DATA)
        mac_key = self._mac_key()
        ct, tag = body[:-TAG_BYTES], body[-TAG_BYTES:]
        if len(body) < TAG_BYTES or not wc_mac_verify(ct, tag, mac_key):
            raise AuthenticationFailure("data message failed authentication")
        with self._metrics.timed("Message Enc-Dec"):
            if seq is None:
                return otp_decrypt(ct, self.pool)
            keys = KeyBundle(pool=self.pool, aes_key_source=self._aes_data_key, secret_key=sk, rng=self.rng)
            return seq_decrypt(ct, seq, keys)


def _accepted_bits(bits: np.ndarray, sizes: list[int], flags: list[int]) -> np.ndarray:
    out, pos = [], 0
    for n, ok in zip(sizes, flags):
        if ok:
            out.append(bits[pos : pos + n])
        pos += n
    return np.concatenate(out) if out else np.zeros(0, np.uint8)


# -- drivers -------------------------------------------------------------------


def make_parties(
    cfg: SystemConfig,
    ledgers: tuple[PskLedger, PskLedger],
    table: MappingTable = DEFAULT_TABLE,
    transports: tuple[Transport, Transport] | None = None,
    keep_keys: bool = False,
) -> tuple[PartyEndpoint, PartyEndpoint]:
    from .wire import InProcessTransport

    ta, tb = transports or InProcessTransport.pair()
    link = QuantumLink(cfg)
    alice = PartyEndpoint(Party.ALICE, cfg, ta, ledgers[0], table, link, keep_keys)
    bob = PartyEndpoint(Party.BOB, cfg, tb, ledgers[1], table, link, keep_keys)
    return alice, bob


def run_pair_cycle(alice: PartyEndpoint, bob: PartyEndpoint, message: bytes) -> tuple[CycleOutcome, CycleOutcome]:
    """Run one cycle with both parties on their own threads."""
    results: dict[str, CycleOutcome] = {}

    def target(party, msg):
        results[party.name] = party.run_cycle(msg)

    threads = [
        threading.Thread(target=target, args=(alice, b""), name="alice"),
        threading.Thread(target=target, args=(bob, message), name="bob"),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results["alice"], results["bob"]


def transcript_bytes(entries: list[TranscriptEntry]) -> bytes:
    return b"".join(bytes([0 if e.direction == "send" else 1]) + e.frame for e in entries)


def transcript_digest(entries: list[TranscriptEntry]) -> str:
    return hashlib.sha256(transcript_bytes(entries)).hexdigest()

