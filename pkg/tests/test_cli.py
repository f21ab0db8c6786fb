import socket
import threading
import time


from qkdpqc.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main
from qkdpqc.primitives.keys import read_psk
from qkdpqc.obfuscation import DEFAULT_TABLE, MappingTable


def test_psk_and_table_generation(tmp_path):
    assert main(["psk-gen", "--out", str(tmp_path / "k.psk"), "--seed", "1", "--pi-bytes", "64"]) == EXIT_OK
    assert read_psk(tmp_path / "k.psk").remaining_bits("pi") == 512
    assert main(["table-gen", "--default", "--out", str(tmp_path / "t.txt")]) == EXIT_OK
    assert MappingTable.load(tmp_path / "t.txt") == DEFAULT_TABLE


def test_cycle_and_baseline(tmp_path, capsys):
    msg = tmp_path / "m.bin"
    msg.write_bytes(b"command line message")
    assert main(["cycle", "--cycles", "2", "--message", str(msg), "--metrics-out", str(tmp_path / "m.tsv")]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("cycle\tparty\tok") and len(out) == 5
    assert all(line.split("\t")[2] == "1" for line in out[1:])
    assert "Total time (in sec.)" in (tmp_path / "m.tsv").read_text()
    assert main(["baseline", "--out", str(tmp_path / "b.tsv")]) == EXIT_OK
    assert "\tOTP\t" in (tmp_path / "b.tsv").read_text()


def test_exit_codes(tmp_path):
    assert main(["cycle", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    (tmp_path / "bad.ini").write_text("[protocol]\nnonsense = 1\n")
    assert main(["cycle", "--config", str(tmp_path / "bad.ini")]) == EXIT_CONFIG
    assert main(["cycle", "--choice", "111"]) == EXIT_ABORT


def test_sim_sync_and_tag_conversion(tmp_path, capsys):
    a, b = str(tmp_path / "a.qtt"), str(tmp_path / "b.qtt")
    assert main(["sim", "--duration", "0.2", "--alice-out", a, "--bob-out", b]) == EXIT_OK
    assert main(["sync", "--alice", a, "--bob", b, "--out", str(tmp_path / "s.tsv")]) == EXIT_OK
    rows = (tmp_path / "s.tsv").read_text().splitlines()
    assert rows[0] == "round\ttau_ps\ttau_accum_ps" and len(rows) == 5
    txt = str(tmp_path / "a.txt")
    assert main(["tags", "convert", a, txt]) == EXIT_OK
    assert main(["tags", "convert", txt, str(tmp_path / "a2.qtt")]) == EXIT_OK
    assert (tmp_path / "a2.qtt").read_bytes() == (tmp_path / "a.qtt").read_bytes()


def test_fig5_cli(tmp_path, capsys):
    assert main(["fig5", "--out", str(tmp_path / "f5.tsv")]) == EXIT_OK
    assert "post_sync_peak_ps\t0" in capsys.readouterr().err


def test_tcp_alice_bob(tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    msg = tmp_path / "m.bin"
    msg.write_bytes(b"over the wire")
    out = tmp_path / "recv.bin"
    codes = {}
    alice = ["alice", "--listen", f"127.0.0.1:{port}", "--output", str(out), "--cycles", "2"]
    t = threading.Thread(target=lambda: codes.setdefault("alice", main(alice)))
    t.start()
    bob = ["bob", "--connect", f"127.0.0.1:{port}", "--message", str(msg), "--cycles", "2"]
    for _ in range(100):
        # a refused connection leaves Alice listening; retry until she is up
        codes["bob"] = main(bob)
        if codes["bob"] == EXIT_OK or not t.is_alive():
            break
        time.sleep(0.05)
    t.join(timeout=60)
    assert codes == {"alice": EXIT_OK, "bob": EXIT_OK}
    assert out.read_bytes() == b"over the wire" * 2
