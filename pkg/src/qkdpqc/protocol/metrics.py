"""Per-codeblock timing, with rows named after the reported execution-time table."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

ROWS = (
    "Signal Accumulation",
    "Synchronization",
    "Time Tag Filtering",
    "Sifting",
    "QBER Estimation",
    "Error Correction",
    "Privacy Amplification",
    "Obfuscation",
    "PQC Key Share",
    "Message Enc-Dec",
    "Classical Communications",
)
TOTAL = "Total time (in sec.)"

# rows that never apply to a party or mode are reported as "--"
NOT_APPLICABLE = {
    ("alice", "hybrid"): {"Synchronization"},
    ("alice", "baseline"): {"Synchronization", "Obfuscation", "PQC Key Share"},
    ("bob", "hybrid"): set(),
    ("bob", "baseline"): {"Obfuscation", "PQC Key Share"},
}


@dataclass
class CycleMetrics:
    party: str
    mode: str
    seconds: dict[str, float] = field(default_factory=lambda: dict.fromkeys(ROWS, 0.0))

    @contextmanager
    def timed(self, row: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[row] += time.perf_counter() - t0

    def add(self, row: str, seconds: float) -> None:
        self.seconds[row] += seconds

    @property
    def total(self) -> float:
        return float(sum(self.seconds.values()))

    def row(self, name: str) -> float | None:
        if name in NOT_APPLICABLE[(self.party, self.mode)]:
            return None
        return self.seconds[name]


def summarize(runs: list[CycleMetrics]) -> dict[str, tuple[float, float] | None]:
    """Mean and standard deviation per row over repeated runs."""
    out: dict[str, tuple[float, float] | None] = {}
    for name in ROWS:
        vals = [r.row(name) for r in runs]
        out[name] = None if vals[0] is None else (float(np.mean(vals)), float(np.std(vals)))
    totals = [r.total for r in runs]
    out[TOTAL] = (float(np.mean(totals)), float(np.std(totals)))
    return out


def metrics_table(groups: dict[tuple[str, str], list[CycleMetrics]]) -> str:
    """Tab-separated ``codeblock, mode, party, mean, std`` rows."""
    lines = ["codeblock\tmode\tparty\tmean_s\tstd_s"]
    for (mode, party), runs in groups.items():
        summary = summarize(runs)
        for name in (*ROWS, TOTAL):
            cell = summary[name]
            mean, std = ("--", "--") if cell is None else (f"{cell[0]:.6f}", f"{cell[1]:.6f}")
            lines.append(f"{name}\t{mode}\t{party}\t{mean}\t{std}")
    return "\n".join(lines) + "\n"
