"""Byte-level secrecy audit of recorded wire transcripts."""
from __future__ import annotations

from dataclasses import dataclass

from .session import PartyEndpoint, transcript_bytes
from .wire import MsgType, pack_body, unpack_body

NEEDLE_BYTES = 16
SECRET_TYPES = {
    MsgType.TAGS: "time tags",
    MsgType.BASES: "bases",
    MsgType.SYNDROME: "syndrome",
}


@dataclass(frozen=True)
class AuditReport:
    hits: dict[str, int]
    checked: dict[str, int]

    @property
    def clean(self) -> bool:
        return not any(self.hits.values())

    def found(self, category: str) -> bool:
        return self.hits.get(category, 0) > 0


def scan(haystack: bytes, needles: dict[str, list[bytes]]) -> AuditReport:
    hits = {k: sum(haystack.count(n) for n in v) for k, v in needles.items()}
    return AuditReport(hits, {k: len(v) for k, v in needles.items()})


def party_needles(party: PartyEndpoint) -> dict[str, list[bytes]]:
    """Distinctive slices of every secret payload the party sent.

    Needs ``party.plain_log`` enabled before the cycle ran. Each payload is
    represented by a 16-byte slice from its middle; random data of that
    length does not recur by chance.
    """
    if party.plain_log is None:
        raise ValueError("plaintext logging was not enabled for this party")
    needles: dict[str, list[bytes]] = {name: [] for name in SECRET_TYPES.values()}
    for kind, body in party.plain_log:
        if kind in SECRET_TYPES:
            _, blob = unpack_body(body)
            if len(blob) >= NEEDLE_BYTES:
                mid = (len(blob) - NEEDLE_BYTES) // 2
                needles[SECRET_TYPES[kind]].append(blob[mid : mid + NEEDLE_BYTES])
    return needles


def sequence_needles(sequence) -> list[bytes]:
    """Cleartext forms of an instruction sequence."""
    return [sequence.canonical().encode(), repr([p.value for p in sequence.steps]).encode()]


def audit_cycle(alice: PartyEndpoint, bob: PartyEndpoint, sequences=()) -> AuditReport:
    """Scan both parties' transcripts for their own secret payloads.

    ``sequences`` lists the IS of every hybrid cycle run, in order. Their
    cleartext forms are searched in the whole transcript. A two-bit
    identifier is too short to search for, so each cycle's PI frame on the
    wire is instead compared with the clear identifier of that cycle. When
    the one-time mask happens to be all zeros the two coincide without a
    leak, so such cycles are skipped.
    """
    needles: dict[str, list[bytes]] = {}
    for party in (alice, bob):
        for k, v in party_needles(party).items():
            needles.setdefault(k, []).extend(v)
    seq_needles = needles.setdefault("instruction sequence", [])
    for seq in sequences:
        seq_needles.extend(sequence_needles(seq))
    wire = transcript_bytes(alice.transcript) + transcript_bytes(bob.transcript)
    report = scan(wire, needles)

    pis = [unpack_body(body)[0]["pi"] for kind, body in bob.plain_log if kind is MsgType.PI]
    frames = [e.frame for e in bob.transcript if e.type is MsgType.PI and e.direction == "send"]
    hits = 0
    for seq, pi, frame in zip(sequences, pis, frames):
        ident = bob.table.identifier_of(seq)
        if pi != ident:
            hits += pack_body({"pi": ident}) in frame
    report.hits["instruction sequence"] += hits
    report.checked["instruction sequence"] += len(frames)
    return report
