"""Descendant counts by graph search and by the backward crossing-edge recursion.

The recursion walks levels ``k = n-1, ..., 1``.  ``Y_k`` red edges cross into
``[k]``; ``Z_k ~ Bin(Y_k, B_k)`` of them end at ``k``; if any does, ``k``
turns red and its ``m`` out-edges join the crossing set.

Three kernels share that loop:

``full``
    stores every per-level array including the compensator ``A`` and the
    martingale ``M``;
``scalar``
    draws ``B_k`` explicitly but keeps O(1) memory (``X``, ``P_0``, ``Xi``);
``x``
    integrates ``B_k`` out, so ``Z_k`` is beta-binomial and each level costs a
    single uniform.  Levels ``k <= n1`` switch back to explicit ``B_k`` when
    ``Xi`` is requested, which leaves the joint law of ``(X, Xi)`` unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .generators import Digraph, reach_count
from .rng import RngStream, STATE_SIZE, beta, binomial, init_state, next_double
from .theory import ModelParams, derive_constants

DEPTHS = ("x", "scalar", "full")


def split_index(n: int) -> int:
    """``n1 = floor(n / ln n)`` clipped to ``[1, n-1]``."""
    if n < 2:
        return 1
    return int(min(max(math.floor(n / math.log(n)), 1), n - 1))


@dataclass
class TraceOptions:
    """Recursion output selection.

    ``depth`` is one of ``x`` (fast, beta-binomial levels), ``scalar`` or
    ``full``.  ``with_xi`` requests ``Xi`` and ``Y_{n1}``; ``checkpoints`` lists
    levels at which ``Y`` is recorded; ``stop_at_n1`` ends the sweep after
    level ``n1`` (``X`` is then left undefined); ``skip_levels`` lets the
    ``x`` kernel jump over levels that no crossing edge hits.
    """

    depth: str = "x"
    with_xi: bool = True
    checkpoints: tuple[int, ...] = ()
    stop_at_n1: bool = False
    skip_levels: bool = True

    def __post_init__(self) -> None:
        if self.depth not in DEPTHS:
            raise ValueError(f"depth must be one of {DEPTHS}, got {self.depth!r}")


@dataclass
class DescendantTrace:
    """Outcome of one recursion sweep.

    Arrays, when present, are indexed by level ``k = 0..n-1``.
    """

    n: int
    m: int
    rho: float
    X: int
    Xi: float = math.nan
    Y_n1: int = -1
    P0: float = math.nan
    checkpoints: dict[int, int] = field(default_factory=dict)
    B: np.ndarray | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None
    J: np.ndarray | None = None
    Phi: np.ndarray | None = None
    W: np.ndarray | None = None
    A: np.ndarray | None = None
    M: np.ndarray | None = None
    P: np.ndarray | None = None

    @property
    def n1(self) -> int:
        return split_index(self.n)

    @property
    def has_arrays(self) -> bool:
        return self.Y is not None


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, inline="always")
def _level_beta(state, k, m, rho, uniform):
    if k == 1:
        return 1.0
    if uniform:
        return 1.0 / k
    return beta(state, m + rho, (2 * k - 3) * m + (k - 1) * rho)


@nb.njit(cache=True)
def _pow1m(b, y):
    """``(1-b)**y`` without cancellation."""
    if y == 0:
        return 1.0
    if b >= 1.0:
        return 0.0
    return math.exp(y * math.log1p(-b))


@nb.njit(cache=True)
def _betabinom_zero(y, a, b, a_int):
    """``P(Z = 0)`` for ``Z ~ BetaBinomial(y, a, b)``."""
    if a_int > 0 and a_int <= 16:
        p = 1.0
        for j in range(a_int):
            p *= (b + j) / (b + y + j)
        return p
    if y <= 32:
        p = 1.0
        for i in range(y):
            p *= (b + i) / (a + b + i)
        return p
    return math.exp(
        math.lgamma(b + y) - math.lgamma(b) + math.lgamma(a + b) - math.lgamma(a + b + y)
    )


@nb.njit(cache=True)
def betabinomial(state, y, a, b, a_int):
    """One ``BetaBinomial(y, a, b)`` draw by sequential inversion."""
    p = _betabinom_zero(y, a, b, a_int)
    u = next_double(state)
    z = 0
    while u >= p and z < y:
        u -= p
        p *= (y - z) * (a + z) / ((z + 1) * (b + y - z - 1))
        z += 1
    return z


@nb.njit(cache=True)
def _binomial_small_p(state, y, q):
    """``Bin(y, q)`` by inversion from zero; used for the uniform variant."""
    p = _pow1m(q, y)
    u = next_double(state)
    z = 0
    r = q / (1.0 - q)
    while u >= p and z < y:
        u -= p
        p *= (y - z) * r / (z + 1)
        z += 1
    return z


@nb.njit(cache=True)
def _record(ck_idx, ck_out, c, lo, hi, y):
    """Store ``y`` for checkpoints in ``[lo, hi]``; returns the next pointer."""
    while c >= 0 and ck_idx[c] >= lo:
        if ck_idx[c] <= hi:
            ck_out[c] = y
        c -= 1
    return c


@nb.njit(cache=True)
def _log_miss_part(j, s, shifts):
    acc = 0.0
    for c in shifts:
        acc += math.lgamma(j - c + s) - math.lgamma(j - c)
    return acc


@nb.njit(cache=True)
def _next_hit_polya(state, K, L, y, theta, shifts):
    """Largest level in ``[L, K]`` where a crossing edge lands, or ``L-1``.

    With ``a = m + rho`` integral, missing every level ``j..K`` has probability
    ``prod_i G(K+1-c_i)/G(K+1-c_i+s) * G(j-c_i+s)/G(j-c_i)`` with ``s = y/theta``.
    """
    s = y / theta
    top = -_log_miss_part(K + 1, s, shifts)
    log_u = math.log(next_double(state) + 0.5 / 9007199254740992.0)
    if top + _log_miss_part(L, s, shifts) > log_u:
        return L - 1
    lo = L
    hi = K + 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if top + _log_miss_part(mid, s, shifts) <= log_u:
            lo = mid
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def _next_hit_uniform(state, K, L, y):
    # missing levels j..K has probability ((j-1)/K)^y
    u = next_double(state) + 0.5 / 9007199254740992.0
    t = int(math.floor(1.0 + K * math.exp(math.log(u) / y)))
    if t > K:
        t = K
    if t < L:
        return L - 1
    return t


@nb.njit(cache=True)
def _positive_betabinomial(state, y, a, b, a_int):
    """``BetaBinomial(y, a, b)`` conditioned on being at least one."""
    p0 = _betabinom_zero(y, a, b, a_int)
    u = next_double(state) * (1.0 - p0)
    p = p0 * y * a / (b + y - 1)
    z = 1
    while u >= p and z < y:
        u -= p
        p *= (y - z) * (a + z) / ((z + 1) * (b + y - z - 1))
        z += 1
    return z


@nb.njit(cache=True)
def _positive_binomial(state, y, q):
    """``Bin(y, q)`` conditioned on being at least one."""
    p0 = _pow1m(q, y)
    r = q / (1.0 - q)
    u = next_double(state) * (1.0 - p0)
    p = p0 * y * r
    z = 1
    while u >= p and z < y:
        u -= p
        p *= (y - z) * r / (z + 1)
        z += 1
    return z


@nb.njit(cache=True)
def _sweep_x(n, m, rho, uniform, state, n1, with_xi, stop_at_n1, ck_idx, ck_out, skip):
    """Marginal sweep; returns ``(X, log Phi_{n1}, Y_{n1})``.

    With ``skip`` the sweep jumps straight to the next red level whenever the
    miss probabilities have a closed form (uniform variant or integral
    ``m + rho``).
    """
    y = m
    x = 1
    a = m + rho
    theta = 2 * m + rho
    a_int = -1
    if not uniform and a == math.floor(a):
        a_int = int(a)
    can_skip = skip and (uniform or (a_int > 0 and a_int <= 16))
    shifts = np.empty(max(a_int, 0))
    for i in range(a_int):
        shifts[i] = (3 * m + rho - i) / theta
    low = n1 + 1 if (with_xi or stop_at_n1) else 2
    c = len(ck_idx) - 1
    log_phi = 0.0
    y_n1 = -1
    k = n - 1
    while k >= 1:
        if can_skip and k >= low:
            if uniform:
                t = _next_hit_uniform(state, k, low, y)
            else:
                t = _next_hit_polya(state, k, low, y, theta, shifts)
            lo = max(t, low)
            c = _record(ck_idx, ck_out, c, lo, k, y)
            if lo <= n1 <= k:
                y_n1 = y
            if t < low:
                k = low - 1
                continue
            if uniform:
                z = _positive_binomial(state, y, 1.0 / t)
            else:
                z = _positive_betabinomial(state, y, a, (2 * t - 3) * m + (t - 1) * rho, a_int)
            x += 1
            y = y - z + m
            k = t - 1
            continue
        c = _record(ck_idx, ck_out, c, k, k, y)
        if k == n1:
            y_n1 = y
            if stop_at_n1:
                return -1, log_phi, y_n1
        if k == 1:
            z = y
            if with_xi:
                log_phi += math.log(m)
        elif with_xi and k <= n1:
            bk = _level_beta(state, k, m, rho, uniform)
            log_phi += math.log1p((m - 1) * bk)
            z = binomial(state, y, bk)
        elif uniform:
            z = _binomial_small_p(state, y, 1.0 / k)
        else:
            z = betabinomial(state, y, a, (2 * k - 3) * m + (k - 1) * rho, a_int)
        if z > 0:
            x += 1
            y = y - z + m
        k -= 1
    return x, log_phi, y_n1


@nb.njit(cache=True)
def _sweep_scalar(n, m, rho, uniform, state, n1, ck_idx, ck_out):
    """Explicit-beta sweep with O(1) memory; returns ``(X, P0, log Phi_{n1}, Y_{n1})``."""
    y = m
    x = 1
    p0 = 0.0
    log_phi = 0.0
    y_n1 = -1
    c = len(ck_idx) - 1
    for k in range(n - 1, 0, -1):
        while c >= 0 and ck_idx[c] > k:
            c -= 1
        if c >= 0 and ck_idx[c] == k:
            ck_out[c] = y
        if k == n1:
            y_n1 = y
        bk = _level_beta(state, k, m, rho, uniform)
        if k <= n1:
            log_phi += math.log1p((m - 1) * bk)
        p0 += 1.0 - _pow1m(bk, y)
        z = y if k == 1 else binomial(state, y, bk)
        if z > 0:
            x += 1
            y = y - z + m
    return x, p0, log_phi, y_n1


@nb.njit(cache=True)
def _sweep_full(n, m, rho, uniform, state, B, Y, Z, J, Phi, W, A, M, P):
    """Explicit-beta sweep storing every per-level quantity; returns ``X``."""
    Y[n - 1] = m
    x = 1
    for k in range(n - 1, 0, -1):
        bk = _level_beta(state, k, m, rho, uniform)
        B[k] = bk
        y = Y[k]
        z = y if k == 1 else binomial(state, y, bk)
        Z[k] = z
        J[k] = 1 if z > 0 else 0
        x += J[k]
        Y[k - 1] = 0 if k == 1 else y - z + m * J[k]
    B[0] = 0.0
    Z[0] = 0
    J[0] = 0
    Phi[0] = 1.0
    for k in range(1, n):
        Phi[k] = Phi[k - 1] * (1.0 + (m - 1) * B[k])
    A[n - 1] = 0.0
    P[n - 1] = 0.0
    for k in range(n - 1, 0, -1):
        y = Y[k]
        if k == 1:
            A[0] = A[1] + Phi[1] * y
        else:
            inc = math.expm1(y * math.log1p(-B[k])) + B[k] * y
            A[k - 1] = A[k] + m * Phi[k - 1] * max(inc, 0.0)
        P[k - 1] = P[k] + 1.0 - _pow1m(B[k], y)
    for k in range(n):
        W[k] = Phi[k] * Y[k]
        M[k] = W[k] + A[k]
    return x


@nb.njit(cache=True, parallel=True)
def _batch_x(n, m, rho, uniform, seed, base, reps, n1, with_xi, stop_at_n1, ck_idx, skip):
    X = np.empty(reps, dtype=np.int64)
    logphi = np.empty(reps)
    yn1 = np.empty(reps, dtype=np.int64)
    ck = np.empty((reps, len(ck_idx)), dtype=np.int64)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        row = np.zeros(len(ck_idx), dtype=np.int64)
        xr, lp, y1 = _sweep_x(n, m, rho, uniform, state, n1, with_xi, stop_at_n1, ck_idx, row, skip)
        X[r] = xr
        logphi[r] = lp
        yn1[r] = y1
        ck[r, :] = row
    return X, logphi, yn1, ck


@nb.njit(cache=True, parallel=True)
def _batch_scalar(n, m, rho, uniform, seed, base, reps, n1, ck_idx):
    X = np.empty(reps, dtype=np.int64)
    P0 = np.empty(reps)
    logphi = np.empty(reps)
    yn1 = np.empty(reps, dtype=np.int64)
    ck = np.empty((reps, len(ck_idx)), dtype=np.int64)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        row = np.zeros(len(ck_idx), dtype=np.int64)
        xr, p0, lp, y1 = _sweep_scalar(n, m, rho, uniform, state, n1, ck_idx, row)
        X[r] = xr
        P0[r] = p0
        logphi[r] = lp
        yn1[r] = y1
        ck[r, :] = row
    return X, P0, logphi, yn1, ck


# ---------------------------------------------------------------------------
# public API


def _check_recursion_params(params: ModelParams) -> bool:
    if params.variant not in ("polya-urn", "uniform"):
        raise ValueError(f"the recursion needs variant polya-urn or uniform, got {params.variant!r}")
    if params.m < 2:
        raise ValueError(f"the recursion needs m >= 2, got {params.m}")
    return params.variant == "uniform"


def _rho_arg(params: ModelParams) -> float:
    return 0.0 if math.isinf(params.rho) else params.rho


def _ck_array(checkpoints, n: int) -> np.ndarray:
    ck = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if ck.size and (ck[0] < 0 or ck[-1] > n - 1):
        raise ValueError(f"checkpoints must lie in [0, {n - 1}]")
    return ck


def _xi(log_phi: np.ndarray | float, y_n1, n: int, kappa: float):
    return np.exp(log_phi - kappa * math.log(n)) * y_n1


def simulate_recursion(
    params: ModelParams, stream: RngStream, opts: TraceOptions | None = None
) -> DescendantTrace:
    """One sweep of the recursion for the Pólya-urn or uniform variant."""
    opts = opts or TraceOptions()
    uniform = _check_recursion_params(params)
    n, m = params.n, params.m
    rho = _rho_arg(params)
    kappa = derive_constants(m, params.rho).kappa
    n1 = split_index(n)
    ck = _ck_array(opts.checkpoints, n)
    ck_out = np.zeros(ck.size, dtype=np.int64)
    if n == 1:
        return DescendantTrace(n=1, m=m, rho=params.rho, X=1)

    if opts.depth == "full":
        arrays = {name: np.zeros(n) for name in ("B", "Phi", "W", "A", "M", "P")}
        arrays.update({name: np.zeros(n, dtype=np.int64) for name in ("Y", "Z", "J")})
        x = _sweep_full(n, m, rho, uniform, stream.state, arrays["B"], arrays["Y"], arrays["Z"],
                        arrays["J"], arrays["Phi"], arrays["W"], arrays["A"], arrays["M"], arrays["P"])
        Y = arrays["Y"]
        return DescendantTrace(
            n=n, m=m, rho=params.rho, X=int(x),
            Xi=float(arrays["W"][n1] / n**kappa), Y_n1=int(Y[n1]), P0=float(arrays["P"][0]),
            checkpoints={int(c): int(Y[c]) for c in ck}, **arrays,
        )
    if opts.depth == "scalar":
        x, p0, lp, y1 = _sweep_scalar(n, m, rho, uniform, stream.state, n1, ck, ck_out)
        return DescendantTrace(
            n=n, m=m, rho=params.rho, X=int(x), Xi=float(_xi(lp, y1, n, kappa)), Y_n1=int(y1),
            P0=float(p0), checkpoints=dict(zip(ck.tolist(), ck_out.tolist())),
        )
    x, lp, y1 = _sweep_x(n, m, rho, uniform, stream.state, n1, opts.with_xi, opts.stop_at_n1, ck, ck_out, opts.skip_levels)
    xi = float(_xi(lp, y1, n, kappa)) if opts.with_xi else math.nan
    return DescendantTrace(
        n=n, m=m, rho=params.rho, X=int(x), Xi=xi, Y_n1=int(y1),
        checkpoints=dict(zip(ck.tolist(), ck_out.tolist())),
    )


@dataclass
class RecursionBatch:
    """Per-replicate summaries from :func:`simulate_recursion_batch`."""

    X: np.ndarray
    Xi: np.ndarray | None
    Y_n1: np.ndarray
    checkpoint_levels: np.ndarray
    checkpoint_Y: np.ndarray
    P0: np.ndarray | None = None


def simulate_recursion_batch(
    params: ModelParams,
    replicates: int,
    stream_base: int = 0,
    opts: TraceOptions | None = None,
) -> RecursionBatch:
    """Run replicates in parallel; replicate ``r`` uses stream ``stream_base + r``."""
    opts = opts or TraceOptions()
    uniform = _check_recursion_params(params)
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    n, m = params.n, params.m
    rho = _rho_arg(params)
    kappa = derive_constants(m, params.rho).kappa
    n1 = split_index(n)
    ck = _ck_array(opts.checkpoints, n)
    seed = np.uint64(params.master_seed)
    if n == 1:
        ones = np.ones(replicates, dtype=np.int64)
        return RecursionBatch(ones, None, -ones, ck, np.zeros((replicates, ck.size), dtype=np.int64))
    if opts.depth == "full":
        raise ValueError("batch runs support depth 'x' or 'scalar'")
    if opts.depth == "scalar":
        X, P0, lp, y1, cko = _batch_scalar(n, m, rho, uniform, seed, stream_base, replicates, n1, ck)
        return RecursionBatch(X, _xi(lp, y1, n, kappa), y1, ck, cko, P0)
    X, lp, y1, cko = _batch_x(n, m, rho, uniform, seed, stream_base, replicates, n1,
                              opts.with_xi, opts.stop_at_n1, ck, opts.skip_levels)
    xi = _xi(lp, y1, n, kappa) if opts.with_xi else None
    return RecursionBatch(X, xi, y1, ck, cko)


def count_descendants(graph: Digraph) -> int:
    """Number of vertices reachable from the last vertex, itself included."""
    return int(reach_count(graph.n, graph.m, np.asarray(graph.targets, dtype=np.int64)))


@dataclass
class CurveTable:
    """Scaled processes sampled on a time grid."""

    t: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    A: np.ndarray
    P: np.ndarray


def _interp_levels(values: np.ndarray, pos: np.ndarray) -> np.ndarray:
    n = values.size
    pos = np.minimum(pos, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    return (1.0 - w) * values[lo] + w * values[hi]


def extract_scaled_curves(trace: DescendantTrace, t_grid) -> CurveTable:
    """``Y, P`` scaled by ``n^-nu`` and ``W, A`` by ``n^-kappa`` at level ``t n^nu``.

    Levels between integers are linearly interpolated; beyond ``n-1`` the
    processes are held constant.
    """
    if not trace.has_arrays or trace.W is None or trace.A is None or trace.P is None:
        raise ValueError("extract_scaled_curves needs a trace recorded with depth='full'")
    t = np.asarray(list(t_grid), dtype=float)
    if np.any(t <= 0):
        raise ValueError("t_grid entries must be positive")
    const = derive_constants(trace.m, trace.rho)
    n = trace.n
    scale_nu = n**const.nu
    scale_kappa = n**const.kappa
    pos = t * scale_nu
    return CurveTable(
        t=t,
        Y=_interp_levels(trace.Y.astype(float), pos) / scale_nu,
        W=_interp_levels(trace.W, pos) / scale_kappa,
        A=_interp_levels(trace.A, pos) / scale_kappa,
        P=_interp_levels(trace.P, pos) / scale_nu,
    )


TRACE_COLUMNS = ("k", "Y", "Z", "J", "Phi", "W", "A", "M", "P")


def write_trace_csv(trace: DescendantTrace, path: str | Path) -> None:
    if not trace.has_arrays:
        raise ValueError("trace has no per-level arrays")
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for k in range(trace.n):
                w.writerow([
                    k, int(trace.Y[k]), int(trace.Z[k]), int(trace.J[k]),
                    "%.17g" % trace.Phi[k], "%.17g" % trace.W[k], "%.17g" % trace.A[k],
                    "%.17g" % trace.M[k], "%.17g" % trace.P[k],
                ])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
