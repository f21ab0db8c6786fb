"""Command-line driver: simulations, experiments and key/table utilities.

Exit codes: 0 success, 2 protocol abort, 3 configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, ProtocolError, QkdPqcError
from .obfuscation import DEFAULT_TABLE, MappingTable, generate_table
from .primitives.keys import DEFAULT_PSK_SIZES, generate_psk, psk_ledger_from_seed, read_psk, write_psk
from .protocol.config import SystemConfig
from .protocol.metrics import metrics_table
from .protocol.session import PartyEndpoint, QuantumLink, run_pair_cycle, make_parties
from .protocol.wire import TcpTransport
from .source import generate
from .sync import run_sync
from .timetag import Party, TagStream, read_tags, write_tags

EXIT_OK = 0
EXIT_ABORT = 2
EXIT_CONFIG = 3

PAPER_SCALE_N_RAW = 40_000


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args) -> SystemConfig:
    cfg = SystemConfig.load(args.config) if getattr(args, "config", None) else SystemConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
        changes["source"] = cfg.source.with_(seed=args.seed)
    if getattr(args, "paper_scale", False):
        changes["n_raw"] = PAPER_SCALE_N_RAW
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "choice", None):
        changes["choice"] = args.choice
    return cfg.with_(**changes)


def _table(args) -> MappingTable:
    return MappingTable.load(args.table) if getattr(args, "table", None) else DEFAULT_TABLE


def _ledger(args, seed: int):
    if getattr(args, "psk", None):
        try:
            return read_psk(args.psk)
        except OSError as exc:
            raise ConfigError(f"cannot read PSK: {exc}") from exc
    return psk_ledger_from_seed(seed)


def _message(args) -> bytes:
    if getattr(args, "message", None):
        try:
            return Path(args.message).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read message: {exc}") from exc
    return b"sixteen byte msg"


def _session_summary(outcomes) -> str:
    lines = ["cycle\tparty\tok\tsequence\tsessions\tqber_mean\tkey_bits\tdelivered_bytes"]
    for oa, ob in outcomes:
        for o in (oa, ob):
            qs = [s.qber for s in o.sessions]
            seq = o.sequence.canonical() if o.sequence else "OTP"
            delivered = len(o.delivered) if o.delivered is not None else 0
            lines.append(
                f"{o.cycle_index}\t{o.role}\t{int(o.ok)}\t{seq}\t{len(o.sessions)}\t"
                f"{(np.mean(qs) if qs else float('nan')):.6f}\t{sum(s.final_len for s in o.sessions)}\t{delivered}"
            )
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------


def cmd_sim(args) -> int:
    cfg = _config(args)
    src = cfg.source.with_(duration=args.duration) if args.duration else cfg.source
    alice, bob, truth = generate(src)
    write_tags(args.alice_out, alice)
    write_tags(args.bob_out, bob)
    print(f"alice_events\t{len(alice)}\nbob_events\t{len(bob)}\ntrue_coincidences\t{truth.emission.size}")
    return EXIT_OK


def cmd_sync(args) -> int:
    cfg = _config(args)
    alice, bob = read_tags(args.alice), read_tags(args.bob)
    result = run_sync(alice, bob, cfg.sync)
    if args.aligned_out:
        write_tags(args.aligned_out, result.aligned)
    lines = ["round\ttau_ps\ttau_accum_ps"]
    lines += [f"{s.round}\t{s.last_tau}\t{s.tau_accum}" for s in result.rounds]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _run_local(args, mode: str) -> int:
    cfg = _config(args).with_(mode=mode)
    table = _table(args)
    message = _message(args)
    groups = {(mode, "alice"): [], (mode, "bob"): []}
    all_outcomes, failed = [], False
    for rep in range(args.repeat):
        rep_cfg = cfg.with_(seed=cfg.seed + rep)
        ledgers = (_ledger(args, rep_cfg.seed), _ledger(args, rep_cfg.seed))
        alice, bob = make_parties(rep_cfg, ledgers, table)
        for _ in range(args.cycles):
            oa, ob = run_pair_cycle(alice, bob, message)
            all_outcomes.append((oa, ob))
            groups[(mode, "alice")].append(oa.metrics)
            groups[(mode, "bob")].append(ob.metrics)
            if not (oa.ok and ob.ok):
                failed = True
                print(f"cycle aborted: {oa.error or ob.error}", file=sys.stderr)
                break
            if oa.delivered != message:
                raise ProtocolError("delivered message differs from the one sent")
    _emit(_session_summary(all_outcomes), args.out)
    if args.metrics_out:
        Path(args.metrics_out).write_text(metrics_table(groups))
    return EXIT_ABORT if failed else EXIT_OK


def cmd_cycle(args) -> int:
    return _run_local(args, args.mode or "hybrid")


def cmd_baseline(args) -> int:
    return _run_local(args, "baseline")


def cmd_fig4(args) -> int:
    from .experiments import FIG4_JITTER_GRID, FIG4_SOURCE, fig4_table, run_fig4

    src = FIG4_SOURCE if args.seed is None else FIG4_SOURCE.with_(seed=args.seed)
    grid = [int(float(x)) for x in args.grid.split(",")] if args.grid else FIG4_JITTER_GRID
    _emit(fig4_table(run_fig4(src, grid)), args.out)
    return EXIT_OK


def cmd_fig5(args) -> int:
    from .experiments import FIG5_SOURCE, fig5_table, run_fig5

    src = FIG5_SOURCE if args.seed is None else FIG5_SOURCE.with_(seed=args.seed)
    if args.no_offset:
        src = src.with_(clock_offset=0, drift_rate=0.0)
    res = run_fig5(src)
    _emit(fig5_table(res), args.out)
    print(f"post_sync_peak_ps\t{res.post_peak_delay}\nrounds_within_1ns\t{res.fraction_within(1000):.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_table2(args) -> int:
    from .experiments import run_table2

    cfg = _config(args)
    res = run_table2(cfg, repeat=args.repeat, message=_message(args))
    _emit(res.render(), args.out)
    if args.metrics_out:
        Path(args.metrics_out).write_text(res.render())
    return EXIT_OK


def cmd_psk_gen(args) -> int:
    sizes = dict(DEFAULT_PSK_SIZES)
    for name in sizes:
        value = getattr(args, f"{name}_bytes")
        if value is not None:
            sizes[name] = value
    data, manifest = generate_psk(sizes, seed=args.seed, n_obs_step=args.n_obs_step)
    manifest_path = write_psk(args.out, data, manifest)
    print(f"wrote {args.out} ({len(data)} bytes) and {manifest_path}")
    return EXIT_OK


def cmd_table_gen(args) -> int:
    table = DEFAULT_TABLE if args.default else generate_table(args.bits, args.max_len, args.seed)
    table.save(args.out)
    print(f"wrote {args.out} digest {table.digest}")
    return EXIT_OK


def cmd_tags(args) -> int:
    if args.tags_cmd == "dump":
        stream = read_tags(args.file)
        lines = [f"# party {stream.party.name.lower()}", "tick_ps\tdetector"]
        n = len(stream) if args.limit is None else min(args.limit, len(stream))
        lines += [f"{t}\t{d}" for t, d in zip(stream.ticks[:n], stream.detectors[:n])]
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK
    src, dst = Path(args.input), Path(args.output)
    if src.suffix == ".txt":
        text = src.read_text().splitlines()
        party = Party.ALICE
        rows = []
        for line in text:
            if line.startswith("# party"):
                party = Party[line.split()[-1].upper()]
            elif line and not line.startswith(("#", "tick")):
                tick, det = line.split()
                rows.append((int(tick), int(det)))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
        write_tags(dst, TagStream.from_unsorted(arr[:, 0], arr[:, 1], party))
    else:
        stream = read_tags(src)
        lines = [f"# party {stream.party.name.lower()}", "tick_ps\tdetector"]
        lines += [f"{t}\t{d}" for t, d in zip(stream.ticks, stream.detectors)]
        dst.write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ConfigError(f"expected host:port, got '{text}'")
    return host or "127.0.0.1", int(port)


def _run_remote(args, role: Party) -> int:
    cfg = _config(args)
    table = _table(args)
    ledger = _ledger(args, cfg.seed)
    if role is Party.ALICE:
        server = TcpTransport.listen(*_host_port(args.listen))
        transport = TcpTransport.accept(server)
        server.close()
    else:
        transport = TcpTransport.connect(*_host_port(args.connect))
    party = PartyEndpoint(role, cfg, transport, ledger, table, QuantumLink(cfg))
    message = _message(args) if role is Party.BOB else b""
    runs, code = [], EXIT_OK
    try:
        for _ in range(args.cycles):
            outcome = party.run_cycle(message)
            runs.append(outcome.metrics)
            if not outcome.ok:
                print(f"cycle aborted: {outcome.error}", file=sys.stderr)
                code = EXIT_ABORT
                break
            if role is Party.ALICE and args.output:
                with open(args.output, "ab") as fh:
                    fh.write(outcome.delivered)
    finally:
        transport.close()
    if args.metrics_out:
        Path(args.metrics_out).write_text(metrics_table({(cfg.mode, party.name): runs}))
    return code


def cmd_alice(args) -> int:
    return _run_remote(args, Party.ALICE)


def cmd_bob(args) -> int:
    return _run_remote(args, Party.BOB)


# -- parser ----------------------------------------------------------------------


def _common(p, protocol: bool = False) -> None:
    p.add_argument("--config", help="INI system configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="write delimited output here instead of stdout")
    p.add_argument("--paper-scale", action="store_true", help="use the laboratory-scale N_raw")
    if protocol:
        p.add_argument("--psk", help="PSK file (with its .json manifest)")
        p.add_argument("--table", help="mapping-table file")
        p.add_argument("--message", help="file holding the data message")
        p.add_argument("--metrics-out", help="per-codeblock timing table")
        p.add_argument("--choice", help="force this IS identifier (default: random)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdpqc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="simulate both parties' time tags")
    _common(p)
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--alice-out", required=True)
    p.add_argument("--bob-out", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("sync", help="synchronize a Bob tag file to an Alice tag file")
    _common(p)
    p.add_argument("--alice", required=True)
    p.add_argument("--bob", required=True)
    p.add_argument("--aligned-out")
    p.set_defaults(func=cmd_sync)

    for name, func, help_ in (("cycle", cmd_cycle, "run QKD-PQC cycles in-process"),
                              ("baseline", cmd_baseline, "run standard QKD + OTP cycles in-process")):
        p = sub.add_parser(name, help=help_)
        _common(p, protocol=True)
        if name == "cycle":
            p.add_argument("--mode", choices=("hybrid", "baseline"))
        p.add_argument("--cycles", type=int, default=1)
        p.add_argument("--repeat", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("fig4", help="QBER and SKR against timing jitter")
    _common(p)
    p.add_argument("--grid", help="comma-separated jitter sigmas in ps")
    p.set_defaults(func=cmd_fig4)

    p = sub.add_parser("fig5", help="coincidence histograms before and after sync")
    _common(p)
    p.add_argument("--no-offset", action="store_true", help="control run without offset or drift")
    p.set_defaults(func=cmd_fig5)

    p = sub.add_parser("table2", help="per-codeblock timing, baseline against hybrid")
    _common(p, protocol=True)
    p.add_argument("--repeat", type=int, default=10)
    p.set_defaults(func=cmd_table2)

    p = sub.add_parser("psk-gen", help="generate a partitioned pre-shared key")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="omit to use OS entropy")
    p.add_argument("--auth-bytes", type=int)
    p.add_argument("--aes-bytes", type=int)
    p.add_argument("--pi-bytes", type=int)
    p.add_argument("--n-obs-step", type=int, default=2)
    p.set_defaults(func=cmd_psk_gen)

    p = sub.add_parser("table-gen", help="write a mapping table")
    p.add_argument("--out", required=True)
    p.add_argument("--default", action="store_true", help="the four-entry reference table")
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_table_gen)

    p = sub.add_parser("tags", help="tag-file tooling")
    tsub = p.add_subparsers(dest="tags_cmd", required=True)
    d = tsub.add_parser("dump")
    d.add_argument("file")
    d.add_argument("--limit", type=int)
    d.add_argument("--out")
    c = tsub.add_parser("convert", help="QTT1 <-> text (.txt)")
    c.add_argument("input")
    c.add_argument("output")
    p.set_defaults(func=cmd_tags)

    for name, func in (("alice", cmd_alice), ("bob", cmd_bob)):
        p = sub.add_parser(name, help=f"run as {name} over TCP")
        _common(p, protocol=True)
        if name == "alice":
            p.add_argument("--listen", required=True, help="host:port")
            p.add_argument("--output", help="append delivered messages here")
        else:
            p.add_argument("--connect", required=True, help="host:port")
        p.add_argument("--mode", choices=("hybrid", "baseline"))
        p.add_argument("--cycles", type=int, default=1)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except QkdPqcError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
