from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError

# Above this QBER the rate-1/2 code no longer decodes reliably, so no key is
# produced even though 1 - h(q) - L is still slightly positive.
DEFAULT_QBER_LIMIT = 0.1


def binary_entropy(q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"binary entropy argument {q} outside [0, 1]")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


@dataclass(frozen=True)
class KeyRateReport:
    q: float
    n: int
    r: float
    skr: float
    final_len: int
    leak_fraction: float

    @property
    def reconciliation_efficiency(self) -> float:
        """Measured f_E = syndrome length / (N h(q)); infinite when h(q) is 0."""
        h = binary_entropy(self.q)
        return self.leak_fraction / h if h > 0 else math.inf


def key_rate(
    q: float,
    code_rate: float,
    n: int = 0,
    duration: float = 1.0,
    qber_limit: float | None = DEFAULT_QBER_LIMIT,
) -> KeyRateReport:
    """Asymptotic rate ``r = 1 - h(q) - (1 - code_rate)`` clamped at zero.

    ``n`` is the reconciled block length and ``duration`` the wall-clock
    session time used to turn the final key length into bits/s. When
    ``qber_limit`` is set, any ``q`` above it yields ``r = 0``.
    """
    if not 0.0 < code_rate <= 1.0:
        raise ConfigError("code_rate must lie in (0, 1]")
    if duration <= 0:
        raise ConfigError("duration must be positive")
    leak = 1.0 - code_rate
    r = 1.0 - binary_entropy(q) - leak
    if r <= 0 or (qber_limit is not None and q > qber_limit):
        r = 0.0
    final_len = math.ceil(r * n) if r > 0 else 0
    return KeyRateReport(q=q, n=n, r=r, skr=final_len / duration, final_len=final_len, leak_fraction=leak)
