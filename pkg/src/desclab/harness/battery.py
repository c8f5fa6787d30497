"""Verification battery: Monte Carlo checks of the closed-form theory.

Each check owns the stream range ``check_index << 40``; sub-experiments
inside a check add ``j << 32``.  Adding or removing a check therefore never
changes the draws of another one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numba as nb
import numpy as np
from scipy import stats as sps

from ..descendants import TraceOptions, simulate_recursion_batch, split_index
from ..generators import batch_targets, batch_descendants
from ..rng import STATE_SIZE, beta, init_state, make_stream
from ..theory import (
    ModelParams, derive_constants, expected_S, expected_beta_moments, expected_phi,
    exact_tree_mean, limit_law, lh_integrals, limit_moment, m1_drift, phi_asymptotic_constant,
)
from ..yule import expected_count, yule_batch
from .experiments import ExperimentConfig, beta_tilde_batch, sample_descendants
from .results import ResultRow, VerificationReport
from .stats import chi_square, summarize, two_sample_ks

CHECKS = {
    "a": "expected_S",
    "b": "expected_phi",
    "c": "beta_moments",
    "d": "s_concentration",
    "e": "lh_sums",
    "f": "pa_equals_pu",
    "g": "xi_limit",
    "h": "yule",
    "i": "selfloop",
    "j": "tree_drift",
}
CHECK_INDEX = {name: i + 1 for i, name in enumerate(CHECKS.values())}


def stream_range(check: str, sub: int = 0) -> int:
    return (CHECK_INDEX[check] << 40) + (sub << 32)


def resolve_checks(selection) -> list[str]:
    """Check names from ``all``, letters, or names (comma separated or a list)."""
    if selection is None:
        return list(CHECKS.values())
    items = selection.split(",") if isinstance(selection, str) else list(selection)
    out: list[str] = []
    for item in items:
        item = item.strip()
        if not item:
            continue
        if item == "all":
            return list(CHECKS.values())
        name = CHECKS.get(item, item)
        if name not in CHECK_INDEX:
            raise ValueError(f"unknown check {item!r}; choose from {', '.join(CHECKS.values())}")
        if name not in out:
            out.append(name)
    return [n for n in CHECKS.values() if n in out]


@dataclass
class Ctx:
    seed: int
    quick: bool

    def pick(self, full, quick):
        return quick if self.quick else full


def _row(name, m, rho, n, reps, est, *, se=None, ref=None, prov=None, tol=None, ok=None,
         variant="polya-urn") -> ResultRow:
    return ResultRow(name=name, variant=variant, m=m, rho=rho, n=n, replicates=reps,
                     estimate=est, stderr=se, reference=ref, provenance=prov, passed=ok,
                     tolerance=tol)


def _sigma_row(name, m, rho, n, sample, ref, prov, k_sigma=4.0, **kw) -> ResultRow:
    s = summarize(sample)
    ok = s.stderr is not None and abs(s.mean - ref) < k_sigma * s.stderr
    tol = None if s.stderr is None else k_sigma * s.stderr
    return _row(name, m, rho, n, s.count, s.mean, se=s.stderr, ref=ref, prov=prov, tol=tol, ok=ok, **kw)


# ---------------------------------------------------------------------------
# urn products: checks a, b, c


@nb.njit(cache=True, parallel=True)
def urn_statistics(m, rho, n, k, i, seed, base, reps):
    """Per replicate: ``S_{n,k}``, ``Phi_k`` and ``B_i`` from one urn sequence."""
    S = np.empty(reps)
    Phi = np.empty(reps)
    Bi = np.empty(reps)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        s = 1.0
        phi = float(m)
        b_i = 0.0
        for j in range(2, n):
            b = beta(state, m + rho, (2 * j - 3) * m + (j - 1) * rho)
            if j > k:
                s *= 1.0 - b
            if j <= k:
                phi *= 1.0 + (m - 1) * b
            if j == i:
                b_i = b
        S[r] = s
        Phi[r] = phi
        Bi[r] = b_i
    return S, Phi, Bi


URN_POINTS = ((1000, 100, 10, 2, 0.0), (300, 30, 5, 3, 1.0), (300, 50, 20, 4, -2.5))
PROV_S = "exact mean of the urn product (Gamma ratio)"
PROV_PHI = "exact mean of the normalising product (Gamma ratio)"
PROV_B = "beta moments of the urn variables"


def _urn_samples(ctx: Ctx, check: str, j: int, point):
    n, k, i, m, rho = point
    reps = ctx.pick(100_000, 10_000)
    return urn_statistics(m, rho, n, k, i, np.uint64(ctx.seed), stream_range(check, j), reps)


def check_expected_S(ctx: Ctx) -> list[ResultRow]:
    rows = []
    for j, pt in enumerate(URN_POINTS):
        n, k, i, m, rho = pt
        S, _, _ = _urn_samples(ctx, "expected_S", j, pt)
        rows.append(_sigma_row(f"expected_S[n={n} k={k}]", m, rho, n, S, expected_S(n, k, m, rho), PROV_S))
    # deterministic bound |E S - (k/n)^chi| <= C / (n^chi k^(1-chi)) with working constant C = 2
    n, k, m, rho = 10_000, 100, 2, 0.0
    chi = derive_constants(m, rho).chi
    ratio = abs(expected_S(n, k, m, rho) - (k / n) ** chi) * n**chi * k ** (1 - chi)
    rows.append(_row("expected_S_bound_ratio", m, rho, n, 0, ratio, ref=2.0,
                     prov="working constant of the mean-product bound", tol=2.0, ok=ratio <= 2.0))
    return rows


def check_expected_phi(ctx: Ctx) -> list[ResultRow]:
    rows = []
    for j, pt in enumerate(URN_POINTS):
        n, k, i, m, rho = pt
        _, Phi, _ = _urn_samples(ctx, "expected_phi", j, pt)
        rows.append(_sigma_row(f"expected_phi[k={k}]", m, rho, n, Phi, expected_phi(k, m, rho), PROV_PHI))
    k = 1_000_000
    est = expected_phi(k, 2, 0.0) / math.sqrt(k)
    ref = phi_asymptotic_constant(2, 0.0)
    rows.append(_row("phi_constant[k=1e6]", 2, 0.0, k, 0, est, ref=ref,
                     prov="asymptotic constant 4/sqrt(pi) of the normalising product",
                     tol=1e-3, ok=abs(est / ref - 1) < 1e-3))
    return rows


def check_beta_moments(ctx: Ctx) -> list[ResultRow]:
    rows = []
    for j, pt in enumerate(URN_POINTS):
        n, k, i, m, rho = pt
        _, _, B = _urn_samples(ctx, "beta_moments", j, pt)
        m1, m2 = expected_beta_moments(i, m, rho)
        rows.append(_sigma_row(f"E_B[i={i}]", m, rho, n, B, m1, PROV_B))
        rows.append(_sigma_row(f"E_B2[i={i}]", m, rho, n, B * B, m2, PROV_B))
    return rows


# ---------------------------------------------------------------------------
# d: concentration of S


@nb.njit(cache=True, parallel=True)
def s_max_deviation(m, rho, n, kmin, chi, seed, base, reps):
    out = np.empty(reps)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        s = 1.0
        worst = 0.0
        for k in range(n - 1, kmin - 1, -1):
            # s == S_{n,k} here
            d = abs(s - (k / n) ** chi)
            if d > worst:
                worst = d
            s *= 1.0 - beta(state, m + rho, (2 * k - 3) * m + (k - 1) * rho)
        out[r] = worst
    return out


def check_s_concentration(ctx: Ctx) -> list[ResultRow]:
    m, rho = 2, 0.0
    n = ctx.pick(1_000_000, 100_000)
    reps = ctx.pick(10, 5)
    psi = n / math.log(n)
    delta = psi ** (-1.0 / 3.0)
    chi = derive_constants(m, rho).chi
    dev = s_max_deviation(m, rho, n, int(math.ceil(psi)), chi, np.uint64(ctx.seed),
                          stream_range("s_concentration"), reps)
    worst = float(dev.max())
    return [_row("s_max_deviation", m, rho, n, reps, worst, ref=2 * delta,
                 prov="concentration radius 2*psi^(-1/3), psi = n/ln n", tol=2 * delta,
                 ok=worst < 2 * delta)]


# ---------------------------------------------------------------------------
# e: the two sums


@nb.njit(cache=True, parallel=True)
def lh_sums(m, rho, lam, y, lo, hi, seed, base, reps):
    H = np.empty(reps)
    I = np.empty(reps)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        h = 0.0
        s = 0.0
        for i in range(lo + 1, hi + 1):
            b = beta(state, m + rho, (2 * i - 3) * m + (i - 1) * rho)
            q = math.expm1(lam * y * math.log1p(-b))
            h += q + lam * y * b
            s -= q
        H[r] = h / lam
        I[r] = s / lam
    return H, I


def lh_sum_means(m: int, rho: float, lam: float, y: float, lo: int, hi: int) -> tuple[float, float]:
    """Exact expectations of the scaled sums at finite ``lam``."""
    theta = 2 * m + rho
    h = s = 0.0
    for i in range(lo + 1, hi + 1):
        e1 = expected_beta_moments(i, m, rho)[0]
        a = theta * i
        epow = math.exp(math.lgamma(a - 2 * m) + math.lgamma(a - 3 * m - rho + lam * y)
                        - math.lgamma(a - 3 * m - rho) - math.lgamma(a - 2 * m + lam * y))
        h += epow - 1 + lam * y * e1
        s += 1 - epow
    return h / lam, s / lam


LH_POINTS = ((2, 0.0, 0.5, 2.0, 1.0), (3, 1.0, 1.0, 2.0, 0.5))


def check_lh_sums(ctx: Ctx) -> list[ResultRow]:
    rows = []
    n = 1_000_000
    reps = ctx.pick(2000, 400)
    for j, (m, rho, s, t, y) in enumerate(LH_POINTS):
        lam = n ** derive_constants(m, rho).nu
        lo, hi = int(math.floor(s * lam)), int(math.floor(t * lam))
        H, I = lh_sums(m, rho, lam, y, lo, hi, np.uint64(ctx.seed), stream_range("lh_sums", j), reps)
        eh, ei = lh_sum_means(m, rho, lam, y, lo, hi)
        rows.append(_sigma_row(f"H_mean[s={s:g} t={t:g} y={y:g}]", m, rho, n, H, eh,
                               "exact finite-lambda mean of the H sum"))
        rows.append(_sigma_row(f"I_mean[s={s:g} t={t:g} y={y:g}]", m, rho, n, I, ei,
                               "exact finite-lambda mean of the I sum"))
        lh, li = lh_integrals(s, t, y, m, rho)
        for name, sample, ref in (("H", H, lh), ("I", I, li)):
            est = float(np.mean(sample))
            rows.append(_row(f"{name}_limit[s={s:g} t={t:g} y={y:g}]", m, rho, n, reps, est,
                             ref=ref, prov="limit integral of the scaled sum", tol=0.05,
                             ok=abs(est / ref - 1) < 0.05))
    return rows


# ---------------------------------------------------------------------------
# f: sequential and urn constructions agree


def exact_target_distribution(n: int, m: int, rho: float) -> np.ndarray:
    """Probabilities of every target tuple of vertices ``3..n`` under sequential attachment.

    Tuples are indexed in mixed radix: each edge of vertex ``k`` contributes
    a digit ``target - 1`` of radix ``k - 1``, first edge most significant.
    """
    radices = [k - 1 for k in range(3, n + 1) for _ in range(m)]
    size = int(np.prod(radices)) if radices else 1
    probs = np.zeros(size)

    def rec(k, l, deg, p, idx):
        if k > n:
            probs[idx] += p
            return
        if l == m:
            deg = deg.copy()
            deg[k] += m
            rec(k + 1, 0, deg, p, idx)
            return
        total = 2.0 * m * (k - 2) + l + (k - 1) * rho
        for j in range(1, k):
            w = deg[j] + rho
            if w <= 0:
                continue
            d2 = deg.copy()
            d2[j] += 1
            rec(k, l + 1, d2, p * w / total, idx * (k - 1) + (j - 1))

    deg = np.zeros(n + 1)
    deg[1] = m
    deg[2] = m
    rec(3, 0, deg, 1.0, 0)
    return probs


def tuple_index(targets: np.ndarray, n: int, m: int) -> np.ndarray:
    """Mixed-radix codes of generated target rows (vertex 2 excluded)."""
    idx = np.zeros(targets.shape[0], dtype=np.int64)
    col = m
    for k in range(3, n + 1):
        for _ in range(m):
            idx = idx * (k - 1) + (targets[:, col] - 1)
            col += 1
    return idx


def check_pa_equals_pu(ctx: Ctx) -> list[ResultRow]:
    n, m, rho = 4, 2, 0.0
    reps = ctx.pick(1_000_000, 100_000)
    probs = exact_target_distribution(n, m, rho)
    rows = []
    for j, variant in enumerate(("sequential", "polya-urn")):
        t = batch_targets(0 if variant == "sequential" else 1, n, m, rho, np.uint64(ctx.seed),
                          stream_range("pa_equals_pu", j), reps, True)
        counts = np.bincount(tuple_index(t, n, m), minlength=probs.size)
        res = chi_square(counts, probs)
        rows.append(_row(f"chi2_p[{variant}]", m, rho, n, reps, res.p, ref=1e-3,
                         prov="exact enumeration of sequential attachment", tol=1e-3,
                         ok=res.p > 1e-3, variant=variant))
    return rows


# ---------------------------------------------------------------------------
# g: Xi against beta_tilde * xi


def xi_and_product_samples(m: int, rho: float, n: int, reps: int, K: int, n_prod: int,
                           seed: int, check: str = "xi_limit") -> tuple[np.ndarray, np.ndarray]:
    params = ModelParams("polya-urn", m, rho, n, seed)
    xi = simulate_recursion_batch(params, reps, stream_range(check, 0), TraceOptions("x", with_xi=True,
                                  stop_at_n1=False)).Xi
    bt = beta_tilde_batch(m, rho, K, n_prod, seed, stream_range(check, 1))
    g = make_stream(seed, stream_range(check, 2)).gammas(m / (m - 1), m - 1.0, n_prod)
    return xi, bt * g


def check_xi_limit(ctx: Ctx) -> list[ResultRow]:
    m, rho = 2, 0.0
    n = ctx.pick(1_000_000, 10_000)
    reps = ctx.pick(2000, 1000)
    K = ctx.pick(100_000, 10_000)
    xi, prod = xi_and_product_samples(m, rho, n, reps, K, reps, ctx.seed)
    ks = two_sample_ks(xi, prod)
    return [_row("ks_xi_vs_product", m, rho, n, reps, ks, ref=0.0,
                 prov="normalised crossing count limit beta_tilde*xi", tol=0.08, ok=ks < 0.08)]


# ---------------------------------------------------------------------------
# h: Yule process


PROV_YULE_MEAN = "Yule mean m/x^(m-1)"
PROV_YULE_LAW = "Yule limit Gamma(m/(m-1), m-1)"


def yule_ks(m: int, x: float, runs: int, ref_size: int, seed: int, base: int) -> float:
    counts = yule_batch(m, x, runs, seed, base)
    ref = make_stream(seed, base + (1 << 31)).gammas(m / (m - 1), m - 1.0, ref_size)
    return two_sample_ks(x ** (m - 1) * counts, ref)


def coupling_samples(m: int, rho: float, n: int, reps: int, seed: int, base: int):
    params = ModelParams("polya-urn", m, rho, n, seed)
    y_n1 = simulate_recursion_batch(params, reps, base, TraceOptions("x", with_xi=False,
                                    stop_at_n1=True)).Y_n1
    chi = derive_constants(m, rho).chi
    x = (split_index(n) / n) ** chi
    yule = yule_batch(m, x, reps, seed, base + (1 << 31))
    return y_n1, yule


def check_yule(ctx: Ctx) -> list[ResultRow]:
    rows = []
    runs = ctx.pick(100_000, 20_000)
    for j, (m, x) in enumerate(((2, 0.1), (3, 0.2))):
        c = yule_batch(m, x, runs, ctx.seed, stream_range("yule", j))
        r = _sigma_row(f"yule_mean[x={x:g}]", m, 0.0, 0, c.astype(float), expected_count(m, x),
                       PROV_YULE_MEAN, k_sigma=3.0, variant="yule")
        rows.append(r)
    ks_runs = ctx.pick(10_000, 2000)
    for j, (m, x) in enumerate(((2, ctx.pick(1e-3, 1e-2)), (3, ctx.pick(1e-2, 3e-2)))):
        ks = yule_ks(m, x, ks_runs, 100_000, ctx.seed, stream_range("yule", 2 + j))
        rows.append(_row(f"yule_ks[x={x:g}]", m, 0.0, 0, ks_runs, ks, ref=0.0, prov=PROV_YULE_LAW,
                         tol=0.03, ok=ks < 0.03, variant="yule"))
    n = ctx.pick(1_000_000, 100_000)
    reps = ctx.pick(10_000, 2000)
    y_n1, yule = coupling_samples(2, 0.0, n, reps, ctx.seed, stream_range("yule", 4))
    ks = two_sample_ks(y_n1, yule)
    rows.append(_row("coupling_ks[Y_n1]", 2, 0.0, n, reps, ks, ref=0.0,
                     prov="crossing count at n1 equals time-changed Yule count in law",
                     tol=0.05, ok=ks < 0.05))
    return rows


# ---------------------------------------------------------------------------
# i: self-loop model


def check_selfloop(ctx: Ctx) -> list[ResultRow]:
    m, rho = 2, 0.0
    n = ctx.pick(100_000, 10_000)
    reps = ctx.pick(2000, 2000)
    nu = derive_constants(m, rho).nu
    loops = sample_descendants(ModelParams("self-loop", m, rho, n, ctx.seed), reps, "graph-bfs",
                               stream_range("selfloop", 0)) / n**nu
    std = sample_descendants(ModelParams("polya-urn", m, rho, n, ctx.seed), reps, "recursion",
                             stream_range("selfloop", 1)) / n**nu
    ref = limit_moment(limit_law(m, rho), 1.0)
    mean = float(np.mean(loops))
    ks = two_sample_ks(loops, std)
    return [
        _row("selfloop_mean_scaled_X", m, rho, n, reps, mean, se=float(np.std(loops, ddof=1) / math.sqrt(reps)),
             ref=ref, prov="limit law first moment", tol=0.12, ok=abs(mean / ref - 1) < 0.12,
             variant="self-loop"),
        _row("selfloop_ks_vs_standard", m, rho, n, reps, ks, ref=0.0,
             prov="self-loop and standard descendant laws coincide", tol=0.08, ok=ks < 0.08,
             variant="self-loop"),
    ]


# ---------------------------------------------------------------------------
# j: trees


def check_tree_drift(ctx: Ctx) -> list[ResultRow]:
    rho = 0.0
    n = ctx.pick(1_000_000, 100_000)
    reps = 1000
    X = sample_descendants(ModelParams("sequential", 1, rho, n, ctx.seed), reps, "graph-bfs",
                           stream_range("tree_drift"))
    ratio = X / math.log(n)
    mean = float(ratio.mean())
    drift = m1_drift(rho)
    rows = [_row("tree_mean_X_over_log_n", 1, rho, n, reps, mean,
                 se=float(ratio.std(ddof=1) / math.sqrt(reps)), ref=drift,
                 prov="tree drift (1+rho)/(2+rho)", tol=0.10, ok=abs(mean / drift - 1) < 0.10,
                 variant="sequential")]
    rows.append(_sigma_row("tree_mean_X", 1, rho, n, X.astype(float), exact_tree_mean(n, rho),
                           "exact finite-n tree mean", variant="sequential"))
    return rows


CHECK_FUNCS: dict[str, Callable[[Ctx], list[ResultRow]]] = {
    "expected_S": check_expected_S,
    "expected_phi": check_expected_phi,
    "beta_moments": check_beta_moments,
    "s_concentration": check_s_concentration,
    "lh_sums": check_lh_sums,
    "pa_equals_pu": check_pa_equals_pu,
    "xi_limit": check_xi_limit,
    "yule": check_yule,
    "selfloop": check_selfloop,
    "tree_drift": check_tree_drift,
}


def run_theory_battery(config: ExperimentConfig) -> VerificationReport:
    """Run the configured checks (all when ``config.checks`` is empty).

    A check that raises is recorded as a failed row and the battery continues.
    """
    ctx = Ctx(seed=config.params.master_seed, quick=config.scale == "quick")
    report = VerificationReport()
    for name in resolve_checks(config.checks or None):
        try:
            rows = CHECK_FUNCS[name](ctx)
        except Exception as exc:  # noqa: BLE001 - reported, battery continues
            rows = [ResultRow(name=f"{name}_error", variant="", m=0, rho=0.0, n=0, replicates=0,
                              estimate=None, provenance=f"{type(exc).__name__}: {exc}", passed=False)]
        for r in rows:
            r.name = f"{name}.{r.name}"
            report.add(r)
    return report
