"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
values, then asserts.
"""
import math
import time

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from qkdpqc.experiments import (
    FIG4_JITTER_GRID,
    FIG4_SOURCE,
    FIG5_SOURCE,
    fig4_table,
    fig5_table,
    new_pair,
    run_cycles,
    run_fig4,
    run_fig5,
    run_table2,
)
from qkdpqc.obfuscation import DEFAULT_TABLE, KeyBundle, decode_is, derive_is, otp_demand_bytes, seq_decrypt, seq_encrypt
from qkdpqc.postproc.ldpc import shipped_code, syndrome
from qkdpqc.postproc.mac import KEY_BYTES, message_words, poly_hash_words, wc_mac_tag
from qkdpqc.postproc.reconcile import reconcile
from qkdpqc.errors import DecodeFailure
from qkdpqc.primitives.aes import aes_block_encrypt, aes_decrypt, aes_encrypt
from qkdpqc.primitives.keys import QkdKeyPool, psk_ledger_from_seed
from qkdpqc.primitives.lwe import LweParams, pq_decrypt, pq_encrypt, pq_keygen
from qkdpqc.protocol.audit import audit_cycle
from qkdpqc.protocol.config import SystemConfig
from qkdpqc.protocol.metrics import ROWS, TOTAL
from qkdpqc.protocol.session import run_pair_cycle, transcript_bytes
from qkdpqc.timetag import NS

MSG = b"sixteen byte msg"


def report(capsys, n, name, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {name}: {detail}")


def h2(q):
    return 0.0 if q in (0.0, 1.0) else -q * math.log2(q) - (1 - q) * math.log2(1 - q)


# 1 -----------------------------------------------------------------------------


def test_1_sync_recovery(capsys):
    t0 = time.perf_counter()
    res = run_fig5(FIG5_SOURCE)
    elapsed = time.perf_counter() - t0
    peak = abs(res.post_peak_delay)
    within = res.fraction_within(1 * NS)
    ok = peak <= NS // 2 and within >= 0.95 and res.rounds == 140 and elapsed < 30
    report(capsys, 1, "sync recovery", ok, f"peak |dt|={peak} ps, rounds within 1 ns={within:.3f} of {res.rounds}, {elapsed:.1f} s")
    assert ok


# 2 -----------------------------------------------------------------------------


def test_2_key_rate_boundary(capsys):
    t0 = time.perf_counter()
    pts = run_fig4(FIG4_SOURCE, FIG4_JITTER_GRID)
    elapsed = time.perf_counter() - t0
    qs = [p.qber for p in pts]
    zero_above = all(p.skr == 0.0 for p in pts if p.qber > 0.1)
    positive_below = all(p.skr > 0 for p in pts if p.qber <= 0.09)
    monotone = all(b >= a for a, b in zip(qs, qs[1:]))
    both_sides = any(q > 0.1 for q in qs) and any(q <= 0.09 for q in qs)
    ok = zero_above and positive_below and monotone and both_sides and elapsed < 60
    report(capsys, 2, "key-rate boundary", ok, f"qber={[round(q, 4) for q in qs]}, {elapsed:.1f} s")
    assert ok


# 3 -----------------------------------------------------------------------------


def test_3_end_to_end_key_identity(capsys):
    t0 = time.perf_counter()
    cfg = SystemConfig(seed=0)
    _, _, outs = run_cycles(cfg, [MSG] * 20, keep_keys=True)
    elapsed = time.perf_counter() - t0
    checked, bad, cycle_q, session_q = 0, [], [], []
    for oa, ob in outs:
        if not (oa.ok and ob.ok and oa.delivered == MSG):
            bad.append(f"cycle {ob.cycle_index} aborted")
        # a cycle's QBER pools the disclosed samples of all its QKD sessions
        sample = [min(cfg.n_raw // 4, s.n_sifted) for s in ob.sessions]
        cycle_q.append(sum(s.qber * n for s, n in zip(ob.sessions, sample)) / sum(sample))
        for sa, sb in zip(oa.sessions, ob.sessions):
            session_q.append(sb.qber)
            if sb.n_reconciled == 0:
                continue
            checked += 1
            expected = math.ceil((1 - h2(sb.qber) - 0.5) * sb.n_reconciled)
            if not (np.array_equal(sa.key, sb.key) and sa.final_len == sb.final_len == expected):
                bad.append(f"session {sb.index}")
    in_band = all(0.05 <= q <= 0.10 for q in cycle_q)
    ok = not bad and checked >= 20 and in_band and elapsed < 120
    report(
        capsys, 3, "end-to-end key identity", ok,
        f"{checked} reconciled sessions identical, cycle qber [{min(cycle_q):.4f}, {max(cycle_q):.4f}] "
        f"(single sessions [{min(session_q):.4f}, {max(session_q):.4f}]), problems={bad[:3]}, {elapsed:.1f} s",
    )
    assert ok


# 4 -----------------------------------------------------------------------------


def test_4_obfuscation_round_trip(capsys):
    t0 = time.perf_counter()
    params = LweParams()
    pk, sk = pq_keygen(params, 4)
    rng = np.random.default_rng(4)
    sizes = rng.integers(0, 512, 1000)
    messages = [rng.bytes(int(n)) for n in sizes]
    failures = 0
    decoded_ok = True
    for ident in DEFAULT_TABLE.identifiers:
        tx_l, rx_l = psk_ledger_from_seed(40), psk_ledger_from_seed(40)
        seq, pi = derive_is(tx_l, DEFAULT_TABLE, ident)
        decoded_ok &= decode_is(pi, rx_l, DEFAULT_TABLE) == seq == DEFAULT_TABLE.lookup(ident)
        need = 8 * sum(otp_demand_bytes(seq, int(n), params) for n in sizes)
        bits = rng.integers(0, 2, need).astype(np.uint8)
        tx_pool, rx_pool = QkdKeyPool(), QkdKeyPool()
        tx_pool.append(bits)
        rx_pool.append(bits)
        aes = iter(psk_ledger_from_seed(41).take_bytes("aes", 32 * 1500)[i : i + 32] for i in range(0, 32 * 1500, 32))
        aes_rx = iter(psk_ledger_from_seed(41).take_bytes("aes", 32 * 1500)[i : i + 32] for i in range(0, 32 * 1500, 32))
        tx = KeyBundle(tx_pool, lambda: next(aes), pk, None, np.random.default_rng(int(ident, 2)))
        rx = KeyBundle(rx_pool, lambda: next(aes_rx), None, sk)
        for m in messages:
            failures += seq_decrypt(seq_encrypt(m, seq, tx), seq, rx) != m

    # pi consumption inside full protocol cycles
    alice, bob = new_pair(SystemConfig(seed=44), 0)
    per_cycle = []
    for _ in range(8):
        before = (alice.ledger.cursor("pi"), bob.ledger.cursor("pi"))
        oa, ob = run_pair_cycle(alice, bob, MSG)
        assert oa.ok and ob.ok
        per_cycle.append((alice.ledger.cursor("pi") - before[0], bob.ledger.cursor("pi") - before[1]))
    elapsed = time.perf_counter() - t0
    pi_ok = all(d == (2, 2) for d in per_cycle)
    ok = decoded_ok and failures == 0 and pi_ok and elapsed < 30
    report(
        capsys, 4, "obfuscation round trip", ok,
        f"4 entries x 1000 messages, {failures} failures, pi bits per cycle={sorted(set(per_cycle))}, {elapsed:.1f} s",
    )
    assert ok


# 5 -----------------------------------------------------------------------------


def _audited(mode, seed, n_cycles, message):
    alice, bob = new_pair(SystemConfig(mode=mode, seed=seed), seed)
    alice.plain_log, bob.plain_log = [], []
    seqs = []
    for _ in range(n_cycles):
        oa, ob = run_pair_cycle(alice, bob, message)
        assert oa.ok and ob.ok
        if ob.sequence is not None:
            seqs.append(ob.sequence)
    return audit_cycle(alice, bob, seqs)


def test_5_transcript_secrecy_audit(capsys):
    t0 = time.perf_counter()
    hybrid_hits = []

    @settings(max_examples=12, deadline=None, derandomize=True, suppress_health_check=list(HealthCheck))
    @given(seed=st.integers(0, 2**31 - 1), message=st.binary(min_size=0, max_size=64))
    def hybrid_clean(seed, message):
        rep = _audited("hybrid", seed, 2, message)
        hybrid_hits.append(rep.hits)
        assert rep.clean, rep.hits

    clean_ok = True
    try:
        hybrid_clean()
    except AssertionError:
        clean_ok = False
    controls = [_audited("baseline", s, 1, MSG) for s in (1, 2, 3)]
    leaks = all(r.found("bases") and r.found("syndrome") for r in controls)
    elapsed = time.perf_counter() - t0
    ok = clean_ok and leaks and elapsed < 30
    report(
        capsys, 5, "transcript secrecy audit", ok,
        f"hybrid runs clean={clean_ok} ({len(hybrid_hits)} examples), baseline leaks bases+syndrome={leaks}, {elapsed:.1f} s",
    )
    assert ok


# 6 -----------------------------------------------------------------------------

FIPS197_KEY = bytes(range(32))
FIPS197_PT = bytes.fromhex("00112233445566778899aabbccddeeff")
FIPS197_CT = bytes.fromhex("8ea2b7ca516745bfeafc49904b496089")
SP800_KEY = bytes.fromhex("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4")
SP800_CTR = bytes.fromhex("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff")
SP800_PT = bytes.fromhex("6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51")
SP800_CT = bytes.fromhex("601ec313775789a5b7a7f504bbf3d228f443e3ca4d62b59aca84e990cacaf5c5")


def test_6_primitive_oracles(capsys):
    t0 = time.perf_counter()
    aes_ok = aes_block_encrypt(FIPS197_PT, FIPS197_KEY) == FIPS197_CT
    ct = aes_encrypt(SP800_PT, SP800_KEY, SP800_CTR)
    aes_ok &= ct == SP800_CTR + SP800_CT and aes_decrypt(ct, SP800_KEY) == SP800_PT

    params = LweParams()
    pk, sk = pq_keygen(params, 6)
    rng = np.random.default_rng(6)
    lwe_failures = 0
    for _ in range(1000):
        m = rng.bytes(32)
        lwe_failures += pq_decrypt(pq_encrypt(m, pk, rng), sk) != m

    # one observed (message, tag) pair; forgers submit other messages with guessed tags
    key = rng.bytes(KEY_BYTES)
    legit = rng.bytes(32)
    legit_tag = wc_mac_tag(legit, key)
    point = np.uint64(int.from_bytes(key[:8], "big"))
    mask = np.uint64(int.from_bytes(key[8:], "big"))
    n_words = message_words(legit).size
    accepts, tried = 0, 0
    for chunk in range(10):
        words = rng.integers(0, 2**63, (100_000, n_words), dtype=np.uint64) * np.uint64(2)
        words |= rng.integers(0, 2, words.shape, dtype=np.uint64)
        words[:, -1] = np.uint64(8 * 32)  # same length as the observed message
        words = words[np.any(words != message_words(legit), axis=1)]
        tags = poly_hash_words(words, point) ^ mask
        if chunk % 2:
            guesses = np.full(tags.shape, int.from_bytes(legit_tag, "big"), dtype=np.uint64)
        else:
            guesses = rng.integers(0, 2**63, tags.shape, dtype=np.uint64) * np.uint64(2)
        accepts += int(np.count_nonzero(tags == guesses))
        tried += tags.size
    elapsed = time.perf_counter() - t0
    ok = aes_ok and lwe_failures == 0 and tried >= 999_990 and accepts == 0 and elapsed < 120
    report(
        capsys, 6, "primitive oracles", ok,
        f"AES KATs={aes_ok}, LWE failures={lwe_failures}/1000, MAC false accepts={accepts}/{tried}, {elapsed:.1f} s",
    )
    assert ok


# 7 -----------------------------------------------------------------------------


def test_7_reconciliation_performance(capsys):
    t0 = time.perf_counter()
    code = shipped_code(4096)
    rng = np.random.default_rng(7)
    success = 0
    for _ in range(100):
        b = rng.integers(0, 2, 4096).astype(np.uint8)
        a = b ^ (rng.random(4096) < 0.0745).astype(np.uint8)
        try:
            success += np.array_equal(reconcile(a, syndrome(code, b), 0.0745, code), b)
        except DecodeFailure:
            pass
    elapsed = time.perf_counter() - t0
    ok = success > 90 and elapsed < 120
    report(capsys, 7, "reconciliation performance", ok, f"frame success {success}/100, {elapsed:.1f} s")
    assert ok


# 8 -----------------------------------------------------------------------------


def test_8_overhead_comparison(capsys):
    t0 = time.perf_counter()
    res = run_table2(SystemConfig(), repeat=10)
    elapsed = time.perf_counter() - t0
    ratios = {p: res.ratio(p) for p in ("alice", "bob")}
    text = res.render()
    names = [line.split("\t")[0] for line in text.splitlines()[1:] if not line.startswith("Overhead")]
    rows_ok = set(names) == set(ROWS) | {TOTAL} and names[: len(ROWS) + 1] == [*ROWS, TOTAL]
    ok = all(1.0 <= r <= 1.25 for r in ratios.values()) and rows_ok and elapsed < 300
    report(
        capsys, 8, "overhead comparison", ok,
        f"ratio alice={ratios['alice']:.4f} bob={ratios['bob']:.4f}, rows match={rows_ok}, {elapsed:.1f} s",
    )
    assert ok


# 9 -----------------------------------------------------------------------------


def _non_timing_outputs():
    fig4 = fig4_table(run_fig4(FIG4_SOURCE.with_(duration=1.0), FIG4_JITTER_GRID[:4])).encode()
    fig5 = fig5_table(run_fig5(FIG5_SOURCE.with_(duration=1.0))).encode()
    alice, bob, outs = run_cycles(SystemConfig(seed=9), [MSG] * 3)
    sessions = repr([(s.key_digest, s.qber, s.final_len) for _, ob in outs for s in ob.sessions]).encode()
    return fig4, fig5, transcript_bytes(alice.transcript), transcript_bytes(bob.transcript), sessions


def test_9_determinism(capsys):
    t0 = time.perf_counter()
    first, second = _non_timing_outputs(), _non_timing_outputs()
    elapsed = time.perf_counter() - t0
    same = [x == y for x, y in zip(first, second)]
    ok = all(same) and elapsed < 60
    report(
        capsys, 9, "determinism", ok,
        f"identical (fig4, fig5, alice wire, bob wire, sessions)={same}, transcript {len(first[2])} bytes, {elapsed:.1f} s",
    )
    assert ok
