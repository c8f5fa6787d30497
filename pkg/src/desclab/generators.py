"""Preferential attachment digraphs under four construction variants.

Vertices are labelled ``1..n``.  ``Digraph.targets`` stores the heads of the
``m`` out-edges of vertex ``k`` at positions ``(k-2)*m .. (k-1)*m - 1``.

The heavy lifting happens in numba kernels that take an RNG state vector, so
the same code serves single graphs and the parallel batch drivers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .rng import RngStream, beta, init_state, next_double, STATE_SIZE
from .theory import ModelParams, canonical_variant

VARIANT_CODES = {"sequential": 0, "polya-urn": 1, "self-loop": 2, "uniform": 3}


@dataclass(frozen=True)
class Digraph:
    """Out-edge array of a generated graph; immutable after construction."""

    n: int
    m: int
    allows_loops: bool
    targets: np.ndarray
    root_loops: int = 0

    def __post_init__(self) -> None:
        self.targets.setflags(write=False)

    def out_edges(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.n:
            raise IndexError(f"vertex {k} outside 1..{self.n}")
        if k == 1:
            return np.full(self.root_loops, 1, dtype=np.int64)
        return self.targets[(k - 2) * self.m : (k - 1) * self.m]

    def degrees(self) -> np.ndarray:
        """Total degrees indexed by vertex (index 0 unused); loops count twice."""
        deg = np.zeros(self.n + 1, dtype=np.int64)
        if self.n >= 2:
            tails = np.repeat(np.arange(2, self.n + 1), self.m)
            np.add.at(deg, tails, 1)
            np.add.at(deg, self.targets, 1)
        deg[1] += 2 * self.root_loops
        return deg

    def self_loops(self) -> np.ndarray:
        """Number of self-loops per vertex (index 0 unused)."""
        loops = np.zeros(self.n + 1, dtype=np.int64)
        loops[1] = self.root_loops
        if self.n >= 2:
            tails = np.repeat(np.arange(2, self.n + 1), self.m)
            np.add.at(loops, tails[self.targets == tails], 1)
        return loops

    def check(self) -> None:
        """Raise ``AssertionError`` if a structural invariant fails."""
        assert self.targets.shape == (self.m * max(self.n - 1, 0),)
        if self.n >= 2:
            tails = np.repeat(np.arange(2, self.n + 1), self.m)
            upper = tails if self.allows_loops else tails - 1
            assert np.all(self.targets >= 1) and np.all(self.targets <= upper)
        expected = 2 * self.m * (self.n - 1) + 2 * self.root_loops
        assert int(self.degrees().sum()) == expected


@dataclass(frozen=True)
class BetaTrace:
    """Urn variables of one Pólya-urn or self-loop graph.

    ``B[j]`` for ``j = 1..n-1`` (``B[0]`` is unused and set to 0), ``S[j]`` for
    ``j = 0..n-1``, and for the self-loop variant ``N[i]`` for ``i = 1..n``.
    """

    B: np.ndarray | None = None
    S: np.ndarray | None = None
    N: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _sequential_fast(n, m, rho, state, targets, pool):
    # pool holds every edge endpoint placed so far; within a step the heads
    # just chosen are appended first so they count towards the next draw.
    size = 0
    for k in range(2, n + 1):
        base = (k - 2) * m
        if k == 2:
            for l in range(m):
                targets[l] = 1
                pool[size] = 1
                size += 1
        else:
            vw = (k - 1) * rho
            for l in range(m):
                x = next_double(state) * (size + vw)
                if x < size:
                    t = pool[int(x)]
                else:
                    t = 1 + int((x - size) / rho)
                    if t > k - 1:
                        t = k - 1
                targets[base + l] = t
                pool[size] = t
                size += 1
        for l in range(m):
            pool[size] = k
            size += 1


@nb.njit(cache=True)
def _sequential_scan(n, m, rho, state, targets, deg):
    for k in range(2, n + 1):
        base = (k - 2) * m
        if k == 2:
            for l in range(m):
                targets[l] = 1
                deg[1] += 1
        else:
            for l in range(m):
                total = 2.0 * m * (k - 2) + l + (k - 1) * rho
                x = next_double(state) * total
                t = k - 1
                acc = 0.0
                for j in range(1, k):
                    acc += deg[j] + rho
                    if x < acc:
                        t = j
                        break
                targets[base + l] = t
                deg[t] += 1
        deg[k] += m


@nb.njit(cache=True)
def _polya_betas(n, m, rho, state, B):
    B[0] = 0.0
    if n >= 2:
        B[1] = 1.0
    a = m + rho
    for j in range(2, n):
        B[j] = beta(state, a, (2 * j - 3) * m + (j - 1) * rho)


@nb.njit(cache=True)
def _polya_targets(n, m, S, state, targets):
    for k in range(2, n + 1):
        base = (k - 2) * m
        top = S[k - 1]
        for l in range(m):
            u = top * next_double(state)
            i = np.searchsorted(S, u, side="right")
            if i > k - 1:
                i = k - 1
            if i < 1:
                i = 1
            targets[base + l] = i


@nb.njit(cache=True)
def _polya_fill(n, m, rho, state, B, S, targets, log_space):
    _polya_betas(n, m, rho, state, B)
    if log_space:
        S[n - 1] = 0.0
        for j in range(n - 1, 1, -1):
            S[j - 1] = S[j] + math.log1p(-B[j])
        S[0] = -np.inf
        for k in range(2, n + 1):
            base = (k - 2) * m
            top = S[k - 1]
            for l in range(m):
                u = top + math.log(next_double(state))
                i = np.searchsorted(S, u, side="right")
                if i > k - 1:
                    i = k - 1
                if i < 1:
                    i = 1
                targets[base + l] = i
    else:
        S[n - 1] = 1.0
        for j in range(n - 1, 0, -1):
            S[j - 1] = S[j] * (1.0 - B[j])
        S[0] = 0.0
        _polya_targets(n, m, S, state, targets)


@nb.njit(cache=True)
def _selfloop_fast(n, m, rho, state, targets, pool, loops):
    # pool: all endpoints so far, vertex 1 starts with m loops (2m entries);
    # before each draw the tail of the new edge is appended.
    size = 0
    for l in range(2 * m):
        pool[size] = 1
        size += 1
    loops[1] = m
    for v in range(2, n + 1):
        base = (v - 2) * m
        vw = v * rho
        for l in range(m):
            pool[size] = v
            size += 1
            x = next_double(state) * (size + vw)
            if x < size:
                t = pool[int(x)]
            else:
                t = 1 + int((x - size) / rho)
                if t > v:
                    t = v
            targets[base + l] = t
            pool[size] = t
            size += 1
            if t == v:
                loops[v] += 1


@nb.njit(cache=True)
def _selfloop_scan(n, m, rho, state, targets, deg, loops):
    deg[1] = 2 * m
    loops[1] = m
    for v in range(2, n + 1):
        base = (v - 2) * m
        for l in range(m):
            deg[v] += 1
            total = 2.0 * (v - 1) * m + 2 * l + 1 + v * rho
            x = next_double(state) * total
            t = v
            acc = 0.0
            for j in range(1, v + 1):
                acc += deg[j] + rho
                if x < acc:
                    t = j
                    break
            targets[base + l] = t
            deg[t] += 1
            if t == v:
                loops[v] += 1


@nb.njit(cache=True)
def _uniform_targets(n, m, state, targets):
    for k in range(2, n + 1):
        base = (k - 2) * m
        for l in range(m):
            t = 1 + int(next_double(state) * (k - 1))
            if t > k - 1:
                t = k - 1
            targets[base + l] = t


@nb.njit(cache=True)
def reach_count(n, m, targets):
    """Vertices reachable from ``n``; edges point downwards so one sweep suffices."""
    if n == 1:
        return 1
    reached = np.zeros(n + 1, dtype=np.uint8)
    reached[n] = 1
    count = 1
    for k in range(n, 1, -1):
        if reached[k]:
            base = (k - 2) * m
            for l in range(m):
                t = targets[base + l]
                if not reached[t]:
                    reached[t] = 1
                    count += 1
    return count


@nb.njit(cache=True)
def _generate(code, n, m, rho, state, targets, fast):
    """Fill ``targets`` for one graph; returns nothing (betas discarded)."""
    if code == 0:
        if fast and rho >= 0.0:
            pool = np.empty(2 * m * max(n - 1, 1), dtype=np.int64)
            _sequential_fast(n, m, rho, state, targets, pool)
        else:
            deg = np.zeros(n + 1, dtype=np.int64)
            _sequential_scan(n, m, rho, state, targets, deg)
    elif code == 1:
        B = np.empty(n)
        S = np.empty(n)
        _polya_fill(n, m, rho, state, B, S, targets, False)
    elif code == 2:
        loops = np.zeros(n + 1, dtype=np.int64)
        if fast and rho >= 0.0:
            pool = np.empty(2 * m * n, dtype=np.int64)
            _selfloop_fast(n, m, rho, state, targets, pool, loops)
        else:
            deg = np.zeros(n + 1, dtype=np.int64)
            _selfloop_scan(n, m, rho, state, targets, deg, loops)
    else:
        _uniform_targets(n, m, state, targets)


@nb.njit(cache=True, parallel=True)
def batch_targets(code, n, m, rho, seed, stream_base, reps, fast):
    """Target arrays of ``reps`` independent graphs, replicate ``r`` on stream ``base + r``."""
    out = np.empty((reps, m * (n - 1)), dtype=np.int64)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(stream_base + r))
        row = np.empty(m * (n - 1), dtype=np.int64)
        _generate(code, n, m, rho, state, row, fast)
        out[r, :] = row
    return out


@nb.njit(cache=True, parallel=True)
def batch_descendants(code, n, m, rho, seed, stream_base, reps, fast):
    """Descendant counts of ``reps`` independent graphs (generate then sweep)."""
    out = np.empty(reps, dtype=np.int64)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(stream_base + r))
        row = np.empty(m * max(n - 1, 0), dtype=np.int64)
        _generate(code, n, m, rho, state, row, fast)
        out[r] = reach_count(n, m, row)
    return out


@nb.njit(cache=True, parallel=True)
def batch_selfloop_counts(n, m, rho, seed, stream_base, reps):
    """Self-loop counts ``N_i`` (rows indexed by vertex) for ``reps`` graphs."""
    out = np.zeros((reps, n + 1), dtype=np.int64)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(stream_base + r))
        targets = np.empty(m * max(n - 1, 0), dtype=np.int64)
        loops = np.zeros(n + 1, dtype=np.int64)
        if rho >= 0.0:
            pool = np.empty(2 * m * n, dtype=np.int64)
            _selfloop_fast(n, m, rho, state, targets, pool, loops)
        else:
            deg = np.zeros(n + 1, dtype=np.int64)
            _selfloop_scan(n, m, rho, state, targets, deg, loops)
        out[r, :] = loops
    return out


# ---------------------------------------------------------------------------
# public API


def _require(params: ModelParams, variant: str, min_n: int, min_m: int) -> None:
    if params.variant != variant:
        raise ValueError(f"expected variant {variant!r}, got {params.variant!r}")
    if params.n < min_n:
        raise ValueError(f"{variant} generator needs n >= {min_n}, got {params.n}")
    if params.m < min_m:
        raise ValueError(f"{variant} generator needs m >= {min_m}, got {params.m}")


def gen_sequential(params: ModelParams, stream: RngStream, fast: bool = True) -> Digraph:
    """Degree-proportional sequential construction.

    For ``rho >= 0`` and ``fast=True`` each edge is drawn in O(1) from a
    mixture of a uniform edge endpoint and a uniform vertex; otherwise a
    linear weight scan is used.
    """
    _require(params, "sequential", 1, 1)
    n, m = params.n, params.m
    targets = np.empty(m * (n - 1), dtype=np.int64)
    if fast and params.rho >= 0:
        pool = np.empty(2 * m * max(n - 1, 1), dtype=np.int64)
        _sequential_fast(n, m, params.rho, stream.state, targets, pool)
    else:
        deg = np.zeros(n + 1, dtype=np.int64)
        _sequential_scan(n, m, params.rho, stream.state, targets, deg)
    return Digraph(n=n, m=m, allows_loops=False, targets=targets)


def gen_polya(params: ModelParams, stream: RngStream, log_space: bool = False) -> tuple[Digraph, BetaTrace]:
    """Pólya-urn construction from independent beta variables.

    With ``log_space=True`` the cumulative products are kept as logarithms;
    ``BetaTrace.S`` then still holds the exponentiated values.
    """
    _require(params, "polya-urn", 2, 2)
    n, m = params.n, params.m
    targets = np.empty(m * (n - 1), dtype=np.int64)
    B = np.empty(n)
    S = np.empty(n)
    _polya_fill(n, m, params.rho, stream.state, B, S, targets, log_space)
    if log_space:
        S = np.exp(S)
    return Digraph(n=n, m=m, allows_loops=False, targets=targets), BetaTrace(B=B, S=S)


def resolve_target(S: np.ndarray, u: float) -> int:
    """Leftmost ``i >= 1`` with ``S[i-1] <= u < S[i]``."""
    return int(np.searchsorted(S, u, side="right"))


def gen_selfloop(params: ModelParams, stream: RngStream, fast: bool = True) -> tuple[Digraph, BetaTrace]:
    """Sequential construction in which each new edge may close a loop."""
    _require(params, "self-loop", 1, 2)
    n, m, rho = params.n, params.m, params.rho
    targets = np.empty(m * (n - 1), dtype=np.int64)
    loops = np.zeros(n + 1, dtype=np.int64)
    if fast and rho >= 0:
        pool = np.empty(2 * m * n, dtype=np.int64)
        _selfloop_fast(n, m, rho, stream.state, targets, pool, loops)
    else:
        deg = np.zeros(n + 1, dtype=np.int64)
        _selfloop_scan(n, m, rho, stream.state, targets, deg, loops)
    graph = Digraph(n=n, m=m, allows_loops=True, targets=targets, root_loops=m)
    return graph, BetaTrace(N=loops)


def gen_uniform(m: int, n: int, stream: RngStream) -> Digraph:
    """Every edge of vertex ``k`` picks a uniform earlier vertex."""
    if int(m) != m or m < 2:
        raise ValueError(f"uniform generator needs m >= 2, got {m}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    targets = np.empty(m * (n - 1), dtype=np.int64)
    _uniform_targets(n, m, stream.state, targets)
    return Digraph(n=n, m=m, allows_loops=False, targets=targets)


def generate(params: ModelParams, stream: RngStream) -> Digraph:
    """Dispatch on ``params.variant`` and return only the graph."""
    if params.variant == "sequential":
        return gen_sequential(params, stream)
    if params.variant == "polya-urn":
        return gen_polya(params, stream)[0]
    if params.variant == "self-loop":
        return gen_selfloop(params, stream)[0]
    return gen_uniform(params.m, params.n, stream)


def variant_code(variant: str) -> int:
    return VARIANT_CODES[canonical_variant(variant)]


def write_edge_list(graph: Digraph, path: str | Path, *, rho: float, variant: str, seed: int) -> None:
    """Tab-separated ``tail<TAB>head`` lines after a one-line header."""
    variant = canonical_variant(variant)
    rho_txt = "inf" if math.isinf(rho) else repr(float(rho))
    lines = [f"# pa-graph n={graph.n} m={graph.m} rho={rho_txt} variant={variant} seed={seed}"]
    lines.extend("1\t1" for _ in range(graph.root_loops))
    if graph.n >= 2:
        tails = np.repeat(np.arange(2, graph.n + 1), graph.m)
        lines.extend(f"{k}\t{t}" for k, t in zip(tails.tolist(), graph.targets.tolist()))
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write edge list to {path}: {exc}") from exc


def read_edge_list(path: str | Path) -> tuple[dict, list[tuple[int, int]]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(item.split("=", 1) for item in text[0].split()[2:])
    edges = [tuple(int(v) for v in line.split("\t")) for line in text[1:] if line]
    return header, edges
