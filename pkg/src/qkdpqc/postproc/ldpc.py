"""Binary LDPC codes for syndrome-based reconciliation.

Codes are built with progressive edge growth (PEG) from a fixed variable-node
degree distribution and a seed, then frozen to text assets so both parties
decode with a bit-identical parity-check matrix.

Asset format (one file per block length)::

    ldpc n=<n> k=<k> digest=<sha256 hex>
    <column indices of check 0, space separated>
    <column indices of check 1>
    ...

The digest is the SHA-256 of the row lines joined with ``\\n``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from ..errors import ConfigError, DecodeFailure

# Edge-perspective variable degree distribution for rate 1/2 (dl = 8 ensemble
# tuned for the binary-input AWGN channel, BP threshold near 0.09 on the BSC).
RATE_HALF_EDGE_DISTRIBUTION = {2: 0.30013, 3: 0.28395, 8: 0.41592}

ASSET_LENGTHS = tuple(range(1024, 4097, 256))
DEFAULT_SEED = 20040101
_LLR_CLIP = 30.0


@dataclass(frozen=True)
class LdpcCode:
    """Sparse parity-check matrix ``H`` with ``m = n - k`` rows."""

    n: int
    rows: tuple[np.ndarray, ...]
    # derived edge tables, filled in __post_init__
    _check_ptr: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_var: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_check: np.ndarray = field(init=False, repr=False, compare=False)
    _var_order: np.ndarray = field(init=False, repr=False, compare=False)
    _var_ptr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lengths = np.array([len(r) for r in self.rows], dtype=np.int64)
        if np.any(lengths == 0):
            raise ConfigError("every check must involve at least one variable")
        ptr = np.zeros(len(self.rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=ptr[1:])
        edge_var = np.concatenate([np.asarray(r, dtype=np.int64) for r in self.rows])
        if edge_var.min() < 0 or edge_var.max() >= self.n:
            raise ConfigError("column index out of range")
        edge_check = np.repeat(np.arange(len(self.rows), dtype=np.int64), lengths)
        var_order = np.argsort(edge_var, kind="stable")
        var_counts = np.bincount(edge_var, minlength=self.n)
        if np.any(var_counts == 0):
            raise ConfigError("every variable must appear in at least one check")
        var_ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(var_counts, out=var_ptr[1:])
        for name, value in (
            ("_check_ptr", ptr),
            ("_edge_var", edge_var),
            ("_edge_check", edge_check),
            ("_var_order", var_order),
            ("_var_ptr", var_ptr),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def n_edges(self) -> int:
        return int(self._edge_var.size)

    def variable_degrees(self) -> np.ndarray:
        return np.diff(self._var_ptr)

    def check_degrees(self) -> np.ndarray:
        return np.diff(self._check_ptr)

    def dense(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        H[self._edge_check, self._edge_var] = 1
        return H

    def row_lines(self) -> list[str]:
        return [" ".join(str(int(c)) for c in r) for r in self.rows]

    @property
    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.row_lines()).encode()).hexdigest()


def syndrome(code: LdpcCode, bits: np.ndarray) -> np.ndarray:
    """``H @ bits`` over GF(2)."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (code.n,):
        raise ValueError(f"expected {code.n} bits, got shape {bits.shape}")
    vals = bits[code._edge_var]
    return (np.add.reduceat(vals, code._check_ptr[:-1]) & 1).astype(np.uint8)


def degree_sequence(n: int, edge_distribution: dict[int, float]) -> np.ndarray:
    """Convert an edge-perspective distribution into ``n`` node degrees, ascending."""
    degrees = np.array(sorted(edge_distribution), dtype=np.int64)
    lam = np.array([edge_distribution[d] for d in degrees], dtype=float)
    node_frac = (lam / degrees) / np.sum(lam / degrees)
    counts = np.floor(node_frac * n).astype(np.int64)
    # hand out the rounding remainder to the largest fractional parts
    rem = n - counts.sum()
    order = np.argsort(-(node_frac * n - counts), kind="stable")
    counts[order[:rem]] += 1
    return np.repeat(degrees, counts)


@numba.njit(cache=True)
def _peg_kernel(n, m, var_degrees, max_check_degree, seed):
    np.random.seed(seed)
    dv_max = var_degrees.max()
    var_adj = np.full((n, dv_max), -1, np.int64)
    var_deg = np.zeros(n, np.int64)
    chk_adj = np.full((m, max_check_degree), -1, np.int64)
    chk_deg = np.zeros(m, np.int64)
    chk_mark = np.zeros(m, np.int64)
    var_mark = np.zeros(n, np.int64)
    stamp = 0
    frontier = np.empty(m, np.int64)
    next_frontier = np.empty(m, np.int64)
    candidates = np.empty(m, np.int64)

    for v in range(n):
        for k in range(var_degrees[v]):
            n_cand = 0
            if k == 0:
                for c in range(m):
                    candidates[n_cand] = c
                    n_cand += 1
            else:
                stamp += 1
                var_mark[v] = stamp
                n_front = 0
                reached = 0
                for e in range(var_deg[v]):
                    c = var_adj[v, e]
                    if chk_mark[c] != stamp:
                        chk_mark[c] = stamp
                        frontier[n_front] = c
                        n_front += 1
                        reached += 1
                while True:
                    n_next = 0
                    for f in range(n_front):
                        c = frontier[f]
                        for e in range(chk_deg[c]):
                            u = chk_adj[c, e]
                            if var_mark[u] == stamp:
                                continue
                            var_mark[u] = stamp
                            for e2 in range(var_deg[u]):
                                c2 = var_adj[u, e2]
                                if chk_mark[c2] != stamp:
                                    chk_mark[c2] = stamp
                                    next_frontier[n_next] = c2
                                    n_next += 1
                    if n_next == 0:
                        # tree stopped growing: any unreached check avoids new cycles
                        for c in range(m):
                            if chk_mark[c] != stamp:
                                candidates[n_cand] = c
                                n_cand += 1
                        break
                    if reached + n_next == m:
                        # last level closes the tree: pick among the farthest checks
                        for f in range(n_next):
                            candidates[n_cand] = next_frontier[f]
                            n_cand += 1
                        break
                    reached += n_next
                    for f in range(n_next):
                        frontier[f] = next_frontier[f]
                    n_front = n_next
                if n_cand == 0:
                    for c in range(m):
                        if chk_mark[c] != stamp:
                            candidates[n_cand] = c
                            n_cand += 1
            best = max_check_degree + 1
            for i in range(n_cand):
                d = chk_deg[candidates[i]]
                if d < best:
                    best = d
            n_best = 0
            for i in range(n_cand):
                if chk_deg[candidates[i]] == best:
                    candidates[n_best] = candidates[i]
                    n_best += 1
            if n_best == 0:
                return var_adj, var_deg, chk_adj, chk_deg, False
            c = candidates[np.random.randint(0, n_best)]
            if chk_deg[c] >= max_check_degree:
                return var_adj, var_deg, chk_adj, chk_deg, False
            var_adj[v, var_deg[v]] = c
            var_deg[v] += 1
            chk_adj[c, chk_deg[c]] = v
            chk_deg[c] += 1
    return var_adj, var_deg, chk_adj, chk_deg, True


def peg_construct(
    n: int,
    m: int,
    edge_distribution: dict[int, float] | None = None,
    seed: int = DEFAULT_SEED,
) -> LdpcCode:
    """Build an ``m x n`` parity-check matrix by progressive edge growth."""
    if not 0 < m < n:
        raise ConfigError("need 0 < m < n")
    dist = edge_distribution or RATE_HALF_EDGE_DISTRIBUTION
    degrees = degree_sequence(n, dist)
    if degrees.max() > m:
        raise ConfigError("variable degree exceeds number of checks")
    max_check = int(np.ceil(degrees.sum() / m)) + 8
    _, _, chk_adj, chk_deg, ok = _peg_kernel(n, m, degrees, max_check, seed)
    if not ok:
        raise ConfigError("PEG construction ran out of check capacity")
    rows = tuple(np.sort(chk_adj[c, : chk_deg[c]]) for c in range(m))
    return LdpcCode(n=n, rows=rows)


# -- asset I/O -------------------------------------------------------------


def dump_code(code: LdpcCode) -> str:
    lines = code.row_lines()
    header = f"ldpc n={code.n} k={code.k} digest={code.digest}"
    return "\n".join([header, *lines]) + "\n"


def parse_code(text: str, expected_digest: str | None = None) -> LdpcCode:
    lines = text.strip("\n").split("\n")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    if not lines[0].startswith("ldpc "):
        raise ConfigError("not an LDPC asset")
    n, k = int(fields["n"]), int(fields["k"])
    rows = tuple(np.array([int(x) for x in ln.split()], dtype=np.int64) for ln in lines[1:])
    code = LdpcCode(n=n, rows=rows)
    if code.k != k:
        raise ConfigError(f"header says k={k}, matrix has k={code.k}")
    if code.digest != fields["digest"]:
        raise ConfigError("LDPC asset digest does not match its contents")
    if expected_digest is not None and code.digest != expected_digest:
        raise ConfigError("LDPC asset digest differs from the pinned value")
    return code


def save_code(code: LdpcCode, path: str | Path) -> None:
    Path(path).write_text(dump_code(code))


def load_code(path: str | Path, expected_digest: str | None = None) -> LdpcCode:
    return parse_code(Path(path).read_text(), expected_digest)


def asset_name(n: int) -> str:
    return f"peg_rate050_n{n}.txt"


def _pinned_digests() -> dict[int, str]:
    text = resources.files("qkdpqc.assets.ldpc").joinpath("DIGESTS").read_text()
    out = {}
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            n, digest = line.split()
            out[int(n)] = digest
    return out


@lru_cache(maxsize=None)
def shipped_code(n: int) -> LdpcCode:
    """Load the shipped rate-1/2 code of block length ``n``, checking its pinned digest."""
    pinned = _pinned_digests()
    if n not in pinned:
        raise ConfigError(f"no shipped LDPC code of length {n}; available: {sorted(pinned)}")
    text = resources.files("qkdpqc.assets.ldpc").joinpath(asset_name(n)).read_text()
    return parse_code(text, pinned[n])


def generate_assets(directory: str | Path, lengths=ASSET_LENGTHS, seed: int = DEFAULT_SEED) -> dict[int, str]:
    """Regenerate the shipped code files and the DIGESTS pin list."""
    directory = Path(directory)
    digests = {}
    for n in lengths:
        code = peg_construct(n, n // 2, seed=seed + n)
        save_code(code, directory / asset_name(n))
        digests[n] = code.digest
    pin = ["# block length, sha256 of row lines"]
    pin += [f"{n} {d}" for n, d in sorted(digests.items())]
    (directory / "DIGESTS").write_text("\n".join(pin) + "\n")
    return digests


# -- decoding --------------------------------------------------------------


def _phi(x: np.ndarray) -> np.ndarray:
    # phi(x) = -log(tanh(x/2)), self-inverse on (0, inf)
    x = np.clip(x, 1e-12, _LLR_CLIP)
    return -np.log(np.tanh(x / 2.0))


@dataclass
class DecodeResult:
    bits: np.ndarray
    iterations: int


def decode_syndrome(
    code: LdpcCode,
    bits: np.ndarray,
    target_syndrome: np.ndarray,
    qber: float,
    max_iterations: int = 100,
) -> DecodeResult:
    """Flip the fewest-likely bits of ``bits`` so that ``H @ out == target_syndrome``.

    Sum-product belief propagation on the error pattern ``e = bits ^ out``
    with a BSC(qber) prior. Raises DecodeFailure if no codeword-consistent
    estimate is reached within ``max_iterations``.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    target = np.asarray(target_syndrome, dtype=np.uint8)
    if target.shape != (code.m,):
        raise ValueError(f"syndrome must have {code.m} bits")
    err_syndrome = syndrome(code, bits) ^ target
    if not err_syndrome.any():
        return DecodeResult(bits.copy(), 0)

    q = min(max(qber, 1e-6), 0.5 - 1e-6)
    prior = np.log((1.0 - q) / q)
    ev = code._edge_var
    ptr = code._check_ptr[:-1]
    var_order = code._var_order
    var_ptr = code._var_ptr[:-1]
    check_sign = np.where(err_syndrome[code._edge_check] == 1, -1.0, 1.0)

    c2v = np.zeros(ev.size)
    total = np.full(code.n, prior)
    for it in range(1, max_iterations + 1):
        v2c = total[ev] - c2v
        mag = _phi(np.abs(v2c))
        neg = (v2c < 0).astype(np.int64)
        mag_sum = np.add.reduceat(mag, ptr)
        neg_sum = np.add.reduceat(neg, ptr)
        ext_mag = _phi(np.repeat(mag_sum, np.diff(code._check_ptr)) - mag)
        ext_neg = np.repeat(neg_sum, np.diff(code._check_ptr)) - neg
        c2v = np.where(ext_neg & 1, -1.0, 1.0) * check_sign * ext_mag
        total = prior + np.add.reduceat(c2v[var_order], var_ptr)
        err = (total < 0).astype(np.uint8)
        if np.array_equal(syndrome(code, err), err_syndrome):
            return DecodeResult(bits ^ err, it)
    raise DecodeFailure(f"BP did not converge in {max_iterations} iterations", max_iterations)
