import numpy as np

from qkdpqc.errors import DigestMismatch, MissingPublicKey, PeerAbort, ProtocolError, QkdPqcError
from qkdpqc.experiments import new_pair, run_cycles
from qkdpqc.obfuscation import DEFAULT_TABLE
from qkdpqc.protocol.audit import audit_cycle
from qkdpqc.protocol.config import SystemConfig
from qkdpqc.protocol.session import Phase, disposition, run_pair_cycle
from qkdpqc.protocol.wire import MsgType, unpack_body

MSG = b"sixteen byte msg"


def phase_trace(party, log):
    def hook(label):
        log.append((label, party.phase, party.pool.available))
    party.fault = hook


def test_hybrid_phases_in_order():
    alice, bob = new_pair(SystemConfig(seed=1), 0)
    log = []
    phase_trace(bob, log)
    oa, ob = run_pair_cycle(alice, bob, MSG)
    assert oa.ok and ob.ok and oa.delivered == MSG
    expected = [Phase.HANDSHAKE, Phase.OBFUSCATION, Phase.QKD_DERIVATION, Phase.AUX_KEYS, Phase.DATA_TRANSFER, Phase.DONE]
    assert oa.phases == ob.phases == expected
    labels = [x[0] for x in log]
    assert labels[:2] == ["handshake", "obfuscation"] and labels[-2:] == ["aux_keys", "data"]
    # data transfer starts only after every QKD session has grown the pool
    assert log[-1][2] >= 8 * len(MSG)
    assert all(p is Phase.QKD_DERIVATION for lab, p, _ in log if lab == "qkd_session")


def test_baseline_phases_skip_obfuscation():
    alice, bob, ((oa, ob),) = run_cycles(SystemConfig(mode="baseline", seed=2), [MSG])
    assert oa.ok and oa.delivered == MSG
    assert ob.phases == [Phase.HANDSHAKE, Phase.QKD_DERIVATION, Phase.DATA_TRANSFER, Phase.DONE]
    kinds = {e.type for e in bob.transcript}
    assert MsgType.PI not in kinds and MsgType.PQ_PUBKEY not in kinds
    assert all(e.disposition in ("cleartext", "otp") for e in bob.transcript)


def test_dispositions():
    assert disposition(MsgType.TAGS, "hybrid") == "aes"
    assert disposition(MsgType.PI, "hybrid") == "otp"
    assert disposition(MsgType.DATA, "hybrid") == "seq"
    assert disposition(MsgType.HELLO, "hybrid") == "cleartext"
    assert disposition(MsgType.MAC, "hybrid") == "cleartext"
    assert disposition(MsgType.PQ_PUBKEY, "hybrid") == "cleartext"
    assert disposition(MsgType.BASES, "baseline") == "cleartext"
    assert disposition(MsgType.DATA, "baseline") == "otp"


def test_config_digest_mismatch_consumes_nothing():
    from qkdpqc.primitives.keys import psk_ledger_from_seed
    from qkdpqc.protocol.session import make_parties

    cfg = SystemConfig(seed=4)
    ledgers = (psk_ledger_from_seed(0), psk_ledger_from_seed(0))
    alice, bob = make_parties(cfg, ledgers)
    bob.cfg = cfg.with_(n_raw=9000)
    oa, ob = run_pair_cycle(alice, bob, MSG)
    assert not oa.ok and not ob.ok
    assert isinstance(oa.error, (DigestMismatch, PeerAbort)) and isinstance(ob.error, (DigestMismatch, PeerAbort))
    assert isinstance(oa.error, DigestMismatch) or isinstance(ob.error, DigestMismatch)
    for ledger in ledgers:
        assert all(ledger.cursor(p) == 0 for p in ("auth", "aes", "pi"))
    assert alice.pool.cursor == bob.pool.cursor == 0


def test_replayed_hello_aborts():
    alice, bob = new_pair(SystemConfig(seed=5), 0)
    bob.cycle_index = 3  # Bob speaks for a later cycle, as a replayed HELLO would
    oa, ob = run_pair_cycle(alice, bob, MSG)
    assert not oa.ok and isinstance(oa.error, (ProtocolError, PeerAbort))
    assert not ob.ok


def test_missing_public_key_aborts():
    alice, bob = new_pair(SystemConfig(seed=6, choice="10"), 0)
    alice.skip = {"pq_share"}
    bob.skip = {"pq_share"}
    oa, ob = run_pair_cycle(alice, bob, MSG)
    assert isinstance(ob.error, MissingPublicKey)
    assert isinstance(oa.error, PeerAbort)


def test_pi_consumption_two_bits_per_cycle():
    k = 5
    alice, bob, outs = run_cycles(SystemConfig(seed=7), [MSG] * k)
    assert all(a.ok and b.ok and a.delivered == MSG for a, b in outs)
    assert alice.ledger.cursor("pi") == bob.ledger.cursor("pi") == 2 * k
    seen = {DEFAULT_TABLE.identifier_of(b.sequence) for _, b in outs}
    assert seen <= set(DEFAULT_TABLE.identifiers)
    assert [a.sequence for a, _ in outs] == [b.sequence for _, b in outs]


def test_forced_choice_every_entry():
    for ident in DEFAULT_TABLE.identifiers:
        _, _, ((oa, ob),) = run_cycles(SystemConfig(seed=8, choice=ident), [MSG])
        assert oa.ok and oa.delivered == MSG
        assert ob.sequence == DEFAULT_TABLE.lookup(ident)


def test_abort_quarantines_fresh_key():
    alice, bob = new_pair(SystemConfig(seed=9), 0)

    def fail(label):
        if label == "data":
            raise QkdPqcError("injected")

    bob.fault = fail
    oa, ob = run_pair_cycle(alice, bob, MSG)
    assert not ob.ok and ob.quarantined > 0
    assert not oa.ok and oa.quarantined > 0
    assert alice.pool.available == bob.pool.available == 0
    assert ob.phases[-1] is Phase.ABORTED


def test_keys_identical_and_lengths():
    _, _, outs = run_cycles(SystemConfig(seed=10), [MSG] * 2, keep_keys=True)
    for oa, ob in outs:
        for sa, sb in zip(oa.sessions, ob.sessions):
            assert sa.key_digest == sb.key_digest and np.array_equal(sa.key, sb.key)
            assert sa.final_len == int(np.ceil(sa.r * sa.n_reconciled))


def test_audit_hybrid_clean_baseline_leaks():
    alice, bob = new_pair(SystemConfig(seed=11), 0)
    alice.plain_log, bob.plain_log = [], []
    seqs = []
    for _ in range(3):
        oa, ob = run_pair_cycle(alice, bob, MSG)
        assert ob.ok
        seqs.append(ob.sequence)
    report = audit_cycle(alice, bob, seqs)
    assert report.clean and report.checked["bases"] > 0

    alice, bob = new_pair(SystemConfig(mode="baseline", seed=11), 0)
    alice.plain_log, bob.plain_log = [], []
    run_pair_cycle(alice, bob, MSG)
    report = audit_cycle(alice, bob)
    assert report.found("bases") and report.found("syndrome") and report.found("time tags")


def test_pi_frame_is_masked():
    alice, bob = new_pair(SystemConfig(seed=12), 0)
    bob.plain_log = []
    run_pair_cycle(alice, bob, MSG)
    (pi_body,) = [b for k, b in bob.plain_log if k is MsgType.PI]
    (wire,) = [e for e in bob.transcript if e.type is MsgType.PI]
    assert unpack_body(pi_body)[0]["pi"] in DEFAULT_TABLE.identifiers
    assert wire.disposition == "otp"


def test_audit_detects_planted_leak():
    from qkdpqc.protocol.session import TranscriptEntry

    alice, bob = new_pair(SystemConfig(seed=13), 0)
    alice.plain_log, bob.plain_log = [], []
    _, ob = run_pair_cycle(alice, bob, MSG)
    (bases,) = [b for k, b in bob.plain_log if k is MsgType.BASES][:1]
    planted = TranscriptEntry("send", MsgType.HELLO, "cleartext", unpack_body(bases)[1] + ob.sequence.canonical().encode())
    bob.transcript.append(planted)
    report = audit_cycle(alice, bob, [ob.sequence])
    assert report.found("bases") and report.found("instruction sequence")
