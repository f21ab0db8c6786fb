import numpy as np
import pytest
from scipy.stats import chisquare

from qkdpqc.errors import ConfigError, LayerFailure, MissingPublicKey, UnknownIdentifier, VersionMismatch
from qkdpqc.obfuscation import (
    DEFAULT_TABLE,
    EncryptedIdentifier,
    InstructionSequence,
    KeyBundle,
    MappingTable,
    Primitive,
    decode_is,
    derive_is,
    generate_table,
    layer_sizes,
    otp_demand_bytes,
    seq_decrypt,
    seq_encrypt,
    seq_encrypt_layers,
)
from qkdpqc.primitives.aes import NONCE_BYTES, ctr_keystream_xor
from qkdpqc.primitives.keys import PskLedger, QkdKeyPool, psk_ledger_from_seed
from qkdpqc.primitives.lwe import LweParams, pq_keygen

PARAMS = LweParams()


@pytest.fixture(scope="module")
def keypair():
    return pq_keygen(PARAMS, 11)


def ledger_with_pi(pi_bytes: bytes) -> PskLedger:
    data = bytes(4) + bytes(4) + pi_bytes
    return PskLedger.from_bytes(data, {"auth": (0, 4), "aes": (4, 8), "pi": (8, 8 + len(pi_bytes))})


class Side:
    """Mirrored key material for a sender/receiver pair."""

    def __init__(self, seed, n_pool_bits=1 << 16, pk=None, sk=None):
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, n_pool_bits).astype(np.uint8)
        aes = rng.bytes(32 * 16)
        self.tx_pool, self.rx_pool = QkdKeyPool(), QkdKeyPool()
        self.tx_pool.append(bits)
        self.rx_pool.append(bits)
        tx_aes, rx_aes = iter(range(16)), iter(range(16))
        self.tx = KeyBundle(self.tx_pool, lambda: aes[32 * next(tx_aes) :][:32], pk, None, np.random.default_rng(seed + 1))
        self.rx = KeyBundle(self.rx_pool, lambda: aes[32 * next(rx_aes) :][:32], None, sk)


def test_table_instance():
    assert DEFAULT_TABLE.lookup("00") == InstructionSequence((Primitive.OTP, Primitive.AES))
    assert DEFAULT_TABLE.lookup("01").canonical() == "AES,OTP"
    assert DEFAULT_TABLE.lookup("10").canonical() == "OTP,PQ_Enc"
    assert DEFAULT_TABLE.lookup("11").canonical() == "PQ_Enc,OTP"
    with pytest.raises(UnknownIdentifier):
        DEFAULT_TABLE.lookup("111")


def test_table_validation():
    seq = InstructionSequence.parse("OTP")
    with pytest.raises(ConfigError):
        MappingTable((("0", seq), ("1", seq)))
    with pytest.raises(ConfigError):
        MappingTable((("0", seq), ("10", InstructionSequence.parse("AES"))))
    with pytest.raises(ConfigError):
        InstructionSequence.parse("OTP,ROT13")


def test_table_file_round_trip(tmp_path):
    DEFAULT_TABLE.save(tmp_path / "t.txt")
    assert MappingTable.load(tmp_path / "t.txt") == DEFAULT_TABLE
    text = (tmp_path / "t.txt").read_text()
    (tmp_path / "bad.txt").write_text(text.replace("01 -> AES,OTP", "01 -> OTP,OTP"))
    with pytest.raises(ConfigError):
        MappingTable.load(tmp_path / "bad.txt")
    with pytest.raises(VersionMismatch):
        MappingTable.loads(text.replace("version 1", "version 2"))


def test_generated_tables_allow_mixed_lengths():
    t = generate_table(3, 3, seed=5)
    assert len(t.entries) == 8 and t.width == 3
    assert MappingTable.loads(t.dumps()) == t


def test_pi_is_identifier_xor_mask():
    ledger = ledger_with_pi(bytes([0b11000000]))
    seq, pi = derive_is(ledger, DEFAULT_TABLE, "10")
    assert pi.pi == "01" and seq.canonical() == "OTP,PQ_Enc"
    assert ledger.cursor("pi") == 2
    rx = ledger_with_pi(bytes([0b11000000]))
    assert decode_is(EncryptedIdentifier("01"), rx, DEFAULT_TABLE).canonical() == "OTP,PQ_Enc"


def test_derive_decode_all_entries():
    tx, rx = psk_ledger_from_seed(3), psk_ledger_from_seed(3)
    for ident in DEFAULT_TABLE.identifiers:
        seq, pi = derive_is(tx, DEFAULT_TABLE, ident)
        assert decode_is(pi, rx, DEFAULT_TABLE) == seq == DEFAULT_TABLE.lookup(ident)
    assert tx.cursor("pi") == rx.cursor("pi") == 2 * len(DEFAULT_TABLE.entries)


def test_tampered_pi_decodes_to_another_entry():
    tx, rx = psk_ledger_from_seed(4), psk_ledger_from_seed(4)
    seq, pi = derive_is(tx, DEFAULT_TABLE, "00")
    flipped = EncryptedIdentifier(("1" if pi.pi[0] == "0" else "0") + pi.pi[1])
    assert decode_is(flipped, rx, DEFAULT_TABLE) != seq


def test_desynchronized_cursor_gives_wrong_sequence():
    tx, rx = psk_ledger_from_seed(5), psk_ledger_from_seed(5)
    rx.take_bits("pi", 2)
    wrong = 0
    for _ in range(20):
        seq, pi = derive_is(tx, DEFAULT_TABLE, "00")
        wrong += decode_is(pi, rx, DEFAULT_TABLE) != seq
    assert wrong > 0


def test_random_choice_is_uniform():
    ledger = psk_ledger_from_seed(6, sizes={"auth": 16, "aes": 32, "pi": 5000})
    rng = np.random.default_rng(0)
    counts = dict.fromkeys(DEFAULT_TABLE.identifiers, 0)
    for _ in range(10_000):
        seq, _ = derive_is(ledger, DEFAULT_TABLE, rng=rng)
        counts[DEFAULT_TABLE.identifier_of(seq)] += 1
    stat = chisquare(list(counts.values())).statistic
    # 5 sigma for a chi-square with 3 degrees of freedom: mean 3, sd sqrt(6)
    assert stat < 3 + 5 * np.sqrt(6)


@pytest.mark.parametrize("ident", ["00", "01", "10", "11"])
def test_round_trip_every_entry(ident, keypair):
    pk, sk = keypair
    # PQ_Enc outermost-but-one expands 64 KiB to about 2.4 MB before the OTP layer
    side = Side(int(ident, 2), n_pool_bits=1 << (25 if ident == "11" else 21), pk=pk, sk=sk)
    rng = np.random.default_rng(9)
    seq = DEFAULT_TABLE.lookup(ident)
    for size in (0, 1, 100, 64 * 1024):
        m = rng.bytes(size)
        c = seq_encrypt(m, seq, side.tx)
        assert seq_decrypt(c, seq, side.rx) == m
    assert side.tx_pool.cursor == side.rx_pool.cursor


def test_single_layer_and_repeats():
    side = Side(1)
    for text in ("OTP", "OTP,OTP", "AES,AES,OTP"):
        seq = InstructionSequence.parse(text)
        assert seq_decrypt(seq_encrypt(b"repeat me", seq, side.tx), seq, side.rx) == b"repeat me"


def test_otp_then_aes_intermediates():
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, 4096).astype(np.uint8)
    key = rng.bytes(32)
    pool = QkdKeyPool()
    pool.append(bits)
    bundle = KeyBundle(pool, lambda: key, rng=rng)
    m = b"layer by layer oracle"
    layers = seq_encrypt_layers(m, InstructionSequence.parse("OTP,AES"), bundle)
    pad = np.packbits(bits[: 8 * len(m)]).tobytes()
    assert layers[0].output == bytes(x ^ y for x, y in zip(m, pad))
    nonce = layers[1].output[:NONCE_BYTES]
    assert layers[1].output[NONCE_BYTES:] == ctr_keystream_xor(layers[0].output, key, nonce)
    assert layers[1].input_size == len(m) and layers[1].output_size == len(m) + NONCE_BYTES


def test_aes_layer_matches_keystream():
    rng = np.random.default_rng(3)
    key = rng.bytes(32)
    bundle = KeyBundle(aes_key_source=lambda: key, rng=rng)
    seq = InstructionSequence.parse("AES")
    out = seq_encrypt_layers(b"keystream check", seq, bundle)[0].output
    assert out[NONCE_BYTES:] == ctr_keystream_xor(b"keystream check", key, out[:NONCE_BYTES])


def test_pq_then_otp_size_accounting(keypair):
    pk, sk = keypair
    side = Side(3, n_pool_bits=1 << 14, pk=pk, sk=sk)
    seq = DEFAULT_TABLE.lookup("11")
    layers = seq_encrypt_layers(bytes(16), seq, side.tx)
    assert layers[0].output_size == PARAMS.ciphertext_bytes(16)
    assert layers[1].output_size == layers[0].output_size
    assert layer_sizes(seq, 16, PARAMS) == [r.output_size for r in layers]
    assert otp_demand_bytes(seq, 16, PARAMS) == PARAMS.ciphertext_bytes(16)
    assert side.tx_pool.cursor == 8 * PARAMS.ciphertext_bytes(16)


def test_missing_public_key():
    side = Side(4)
    with pytest.raises(MissingPublicKey):
        seq_encrypt(b"m", DEFAULT_TABLE.lookup("10"), side.tx)
    with pytest.raises(MissingPublicKey):
        layer_sizes(DEFAULT_TABLE.lookup("11"), 16, None)


def test_reversed_order_does_not_decrypt():
    side = Side(5)
    seq = InstructionSequence.parse("OTP,AES")
    m = b"non-commuting layers"
    c = seq_encrypt(m, seq, side.tx)
    try:
        out = seq_decrypt(c, seq.reversed(), side.rx)
    except LayerFailure:
        return
    assert out != m


def test_corrupted_ciphertext(keypair):
    pk, sk = keypair
    side = Side(6, pk=pk, sk=sk)
    seq = DEFAULT_TABLE.lookup("10")
    c = bytearray(seq_encrypt(b"sixteen byte msg", seq, side.tx))
    c[2] ^= 0xFF  # hits the PQ header magic under the OTP layer
    with pytest.raises(LayerFailure) as err:
        seq_decrypt(bytes(c), seq, side.rx)
    assert err.value.layer == 2
