"""Seeded experiment drivers. Each returns rows and a tab-separated rendering.

Every non-timing output is a pure function of the seeds, so reruns are
byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .obfuscation import DEFAULT_TABLE, MappingTable
from .postproc.keyrate import key_rate
from .postproc.sifting import DEFAULT_WINDOW, time_filter_and_sift
from .primitives.keys import psk_ledger_from_seed
from .protocol.config import SystemConfig
from .protocol.metrics import TOTAL, CycleMetrics, metrics_table, summarize
from .protocol.session import make_parties, run_pair_cycle
from .source import SourceConfig, generate
from .sync import SyncParams, run_sync
from .timetag import MS, NS, coincidence_histogram

# -- QBER / SKR against timing error -------------------------------------------

FIG4_JITTER_GRID = (0, 500, 1000, 1500, 2000, 3000, 4000, 6000, 8000, 10000)
# heavy background so that accidentals push QBER past 0.1 inside the grid; the
# long acquisition keeps sampling noise below the step between grid points
FIG4_SOURCE = SourceConfig(duration=20.0, background_rate=30_000.0, seed=4)


@dataclass(frozen=True)
class Fig4Point:
    jitter_sigma: int
    coincidences: int
    sifted: int
    qber: float
    r: float
    skr: float


def run_fig4(
    source: SourceConfig = FIG4_SOURCE,
    jitter_grid=FIG4_JITTER_GRID,
    window: int = DEFAULT_WINDOW,
    code_rate: float = 0.5,
) -> list[Fig4Point]:
    """Sweep the detector jitter at a fixed seed (common random numbers).

    QBER is the full mismatch fraction of the sifted key, and SKR is the
    asymptotic final length per second of acquisition.
    """
    points = []
    for sigma in jitter_grid:
        alice, bob, _ = generate(source.with_(jitter_sigma=int(sigma)))
        ka, kb, _ = time_filter_and_sift(alice, bob, window)
        q = float(np.count_nonzero(ka.bits != kb.bits)) / len(ka)
        rep = key_rate(q, code_rate, n=len(ka), duration=source.duration)
        points.append(Fig4Point(int(sigma), int(ka.n_raw), len(ka), q, rep.r, rep.skr))
    return points


def fig4_table(points: list[Fig4Point]) -> str:
    lines = ["jitter_sigma_ps\tcoincidences\tsifted\tqber\tr\tskr_bps"]
    lines += [f"{p.jitter_sigma}\t{p.coincidences}\t{p.sifted}\t{p.qber:.6f}\t{p.r:.6f}\t{p.skr:.3f}" for p in points]
    return "\n".join(lines) + "\n"


# -- coincidence histogram before and after synchronization ----------------------

FIG5_SOURCE = SourceConfig(duration=7.0, clock_offset=10 * NS, drift_rate=1 * NS / (250 * MS), seed=5)


@dataclass
class Fig5Result:
    delays: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    residuals: np.ndarray  # per-round |clock error + applied correction|, ps
    rounds: int = 0

    @property
    def post_peak_delay(self) -> int:
        return int(self.delays[int(np.argmax(self.post))])

    def fraction_within(self, bound: int) -> float:
        return float(np.mean(self.residuals <= bound))


def run_fig5(
    source: SourceConfig = FIG5_SOURCE,
    params: SyncParams = SyncParams(),
    span: int = 50 * NS,
    step: int = NS // 2,
    window: int = NS // 2,
) -> Fig5Result:
    """Histograms over ``[-span, span]``; a bin counts pairs within ``window / 2`` of its delay."""
    alice, bob, truth = generate(source)
    delays = np.arange(-span, span + 1, step, dtype=np.int64)
    half = window // 2
    pre = np.array([c for _, c in coincidence_histogram(alice, bob, delays, half)])
    result = run_sync(alice, bob, params, origin=source.start_time)
    post = np.array([c for _, c in coincidence_histogram(alice, result.aligned, delays, half)])
    residuals = []
    for k, state in enumerate(result.rounds):
        mid = source.start_time + int((k + 0.5) * params.t_acq)
        err = int(truth.bob_clock_error(mid))
        residuals.append(abs(err + state.tau_accum))
    return Fig5Result(delays, pre, post, np.array(residuals), len(result.rounds))


def fig5_table(res: Fig5Result) -> str:
    lines = ["delay_ps\tpre_sync\tpost_sync"]
    lines += [f"{d}\t{a}\t{b}" for d, a, b in zip(res.delays, res.pre, res.post)]
    return "\n".join(lines) + "\n"


# -- end-to-end cycles and the overhead table ----------------------------------


def new_pair(cfg: SystemConfig, psk_seed: int, table: MappingTable = DEFAULT_TABLE, keep_keys: bool = False):
    ledgers = (psk_ledger_from_seed(psk_seed), psk_ledger_from_seed(psk_seed))
    return make_parties(cfg, ledgers, table, keep_keys=keep_keys)


def run_cycles(cfg: SystemConfig, messages: list[bytes], psk_seed: int = 0, keep_keys: bool = False):
    """Run consecutive cycles on one pair of parties; returns (alice, bob, outcomes)."""
    alice, bob = new_pair(cfg, psk_seed, keep_keys=keep_keys)
    outcomes = [run_pair_cycle(alice, bob, m) for m in messages]
    return alice, bob, outcomes


@dataclass
class Table2Result:
    groups: dict[tuple[str, str], list[CycleMetrics]]
    sessions: list[int]

    def ratio(self, party: str) -> float:
        hybrid = summarize(self.groups[("hybrid", party)])[TOTAL][0]
        baseline = summarize(self.groups[("baseline", party)])[TOTAL][0]
        return hybrid / baseline

    def render(self) -> str:
        text = metrics_table(self.groups)
        for party in ("alice", "bob"):
            text += f"Overhead Ratio\thybrid/baseline\t{party}\t{self.ratio(party):.6f}\t0.000000\n"
        return text


def run_table2(
    cfg: SystemConfig = SystemConfig(),
    repeat: int = 10,
    message: bytes = b"sixteen byte msg",
    psk_seed: int = 0,
    warmup: bool = True,
) -> Table2Result:
    """Time both modes over ``repeat`` runs with identical seeds.

    Each run executes the hybrid cycle, then a baseline cycle forced to the
    same number of QKD sessions, so both pipelines process the same quantum
    data and differ only in the cryptographic layers.
    """
    if warmup:  # compile numba kernels and fill caches outside the measurement
        run_cycles(cfg.with_(mode="hybrid", seed=cfg.seed + 10**6), [message], psk_seed)
    groups = {(m, p): [] for m in ("hybrid", "baseline") for p in ("alice", "bob")}
    sessions = []
    for k in range(repeat):
        seed = cfg.seed + k
        _, _, ((ha, hb),) = run_cycles(cfg.with_(mode="hybrid", seed=seed), [message], psk_seed)
        n = len(hb.sessions)
        base_cfg = cfg.with_(mode="baseline", seed=seed, min_sessions=n, max_sessions=max(n, cfg.max_sessions))
        _, _, ((ba, bb),) = run_cycles(base_cfg, [message], psk_seed)
        for mode, oa, ob in (("hybrid", ha, hb), ("baseline", ba, bb)):
            if not (oa.ok and ob.ok):
                raise RuntimeError(f"{mode} cycle aborted: {oa.error or ob.error}")
            groups[(mode, "alice")].append(oa.metrics)
            groups[(mode, "bob")].append(ob.metrics)
        sessions.append(n)
    return Table2Result(groups, sessions)
