"""Parallel Monte Carlo experiments on descendant counts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from ..descendants import TraceOptions, simulate_recursion_batch
from ..generators import batch_descendants, variant_code
from ..rng import RngStream, STATE_SIZE, beta, init_state, make_stream
from ..theory import (
    ModelParams, derive_constants, limit_cdf_reference, limit_law, limit_moment,
    m1_drift, exact_tree_mean, mean_curve_Y, phi_asymptotic_constant,
)
from .results import ResultRow, ResultTable
from .stats import moment_stderr, summarize, two_sample_ks

PIPELINES = ("recursion", "graph-bfs")
PIPELINE_ALIASES = {"bfs": "graph-bfs", "graph": "graph-bfs"}
REFERENCE_STREAM = 1 << 62

PROV_MOMENT = "limit law moment (closed form)"
PROV_QUANTILE = "limit law reference sample quantile"
PROV_CURVE = "limit mean curve of the scaled crossing count"
PROV_DRIFT = "tree drift (1+rho)/(2+rho)"
PROV_TREE_MEAN = "exact finite-n tree mean"


def canonical_pipeline(name: str) -> str:
    name = PIPELINE_ALIASES.get(name, name)
    if name not in PIPELINES:
        raise ValueError(f"unknown pipeline {name!r}; expected one of {', '.join(PIPELINES)}")
    return name


@dataclass
class ExperimentConfig:
    """Everything needed to run an experiment reproducibly.

    Replicate ``r`` always uses stream ``stream_base + r`` of
    ``params.master_seed``.
    """

    params: ModelParams = field(default_factory=ModelParams)
    replicates: int = 1000
    pipeline: str = "recursion"
    depth: str = "x"
    t_grid: list[float] = field(default_factory=list)
    checks: list[str] = field(default_factory=list)
    moments: list[float] = field(default_factory=lambda: [1.0, 2.0])
    quantiles: list[float] = field(default_factory=lambda: [0.1, 0.5, 0.9])
    reference_size: int = 1_000_000
    mean_tolerance: float = 0.10
    curve_tolerance: float = 0.05
    allow_m1: bool = False
    stream_base: int = 0
    scale: str = "full"
    output: str | None = None
    format: str = "csv"

    def __post_init__(self) -> None:
        if isinstance(self.params, dict):
            self.params = ModelParams.from_dict(self.params)
        self.pipeline = canonical_pipeline(self.pipeline)
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if any(t <= 0 for t in self.t_grid):
            raise ValueError("t_grid entries must be positive")
        if self.scale not in ("full", "quick"):
            raise ValueError(f"scale must be 'full' or 'quick', got {self.scale!r}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be 'csv' or 'json', got {self.format!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def check_model_for_limit(params: ModelParams, allow_m1: bool) -> None:
    if params.m == 1 and not allow_m1:
        raise ValueError("the limit law needs m >= 2; pass allow_m1 for the tree drift check")


def sample_descendants(params: ModelParams, replicates: int, pipeline: str = "recursion",
                       stream_base: int = 0) -> np.ndarray:
    """Descendant counts of independent replicates."""
    pipeline = canonical_pipeline(pipeline)
    if pipeline == "recursion":
        batch = simulate_recursion_batch(params, replicates, stream_base,
                                         TraceOptions("x", with_xi=False))
        return batch.X
    rho = 0.0 if math.isinf(params.rho) else params.rho
    return batch_descendants(variant_code(params.variant), params.n, params.m, rho,
                             np.uint64(params.master_seed), stream_base, replicates, True)


def reference_sample(m: int, rho: float, seed: int, size: int) -> np.ndarray:
    """Sorted limit-law sample on a stream reserved for references."""
    return limit_cdf_reference(limit_law(m, rho), make_stream(seed, REFERENCE_STREAM), size)


def curve_levels(n: int, nu: float, t_grid) -> list[int]:
    return [min(int(math.floor(t * n**nu)), n - 1) for t in t_grid]


def _row(params: ModelParams, replicates: int, name: str, estimate, **kw) -> ResultRow:
    return ResultRow(name=name, variant=params.variant, m=params.m, rho=params.rho,
                     n=params.n, replicates=replicates, estimate=estimate, **kw)


def _rel_ok(est: float, ref: float, tol: float) -> bool:
    return abs(est - ref) / abs(ref) < tol


def run_distribution_experiment(config: ExperimentConfig) -> ResultTable:
    """Summaries of ``X / n^nu`` against the limit law.

    Raw samples are kept in ``table.samples`` under ``X``, ``scaled`` and
    ``reference`` (sorted limit-law sample).
    """
    p = config.params
    check_model_for_limit(p, config.allow_m1)
    R = config.replicates
    table = ResultTable()
    if p.m == 1:
        if config.pipeline != "graph-bfs":
            raise ValueError("trees (m = 1) are simulated with the graph-bfs pipeline")
        X = sample_descendants(p, R, "graph-bfs", config.stream_base)
        table.samples["X"] = X
        s = summarize(X / math.log(p.n))
        drift = m1_drift(p.rho)
        table.add(_row(p, R, "mean_X_over_log_n", s.mean, stderr=s.stderr, reference=drift,
                       provenance=PROV_DRIFT, passed=_rel_ok(s.mean, drift, config.mean_tolerance)))
        exact = exact_tree_mean(p.n, p.rho)
        sx = summarize(X)
        ok = None if sx.stderr is None else abs(sx.mean - exact) < 4 * sx.stderr
        table.add(_row(p, R, "mean_X", sx.mean, stderr=sx.stderr, reference=exact,
                       provenance=PROV_TREE_MEAN, passed=ok))
        return table

    const = derive_constants(p.m, p.rho)
    law = limit_law(p.m, p.rho)
    levels = curve_levels(p.n, const.nu, config.t_grid)
    if config.pipeline == "recursion":
        batch = simulate_recursion_batch(
            p, R, config.stream_base,
            TraceOptions("x", with_xi=False, checkpoints=tuple(levels)),
        )
        X = batch.X
    else:
        if config.t_grid:
            raise ValueError("curve checkpoints need the recursion pipeline")
        X = sample_descendants(p, R, "graph-bfs", config.stream_base)
        batch = None
    scaled = X / p.n**const.nu
    ref = reference_sample(p.m, p.rho, p.master_seed, config.reference_size)
    table.samples.update(X=X, scaled=scaled, reference=ref)

    s = summarize(scaled, config.quantiles)
    mean_ref = limit_moment(law, 1.0)
    table.add(_row(p, R, "mean_scaled_X", s.mean, stderr=s.stderr, reference=mean_ref,
                   provenance=PROV_MOMENT, passed=_rel_ok(s.mean, mean_ref, config.mean_tolerance)))
    table.add(_row(p, R, "var_scaled_X", s.variance, reference=limit_moment(law, 2.0) - mean_ref**2,
                   provenance=PROV_MOMENT))
    for q in config.moments:
        est, se = moment_stderr(scaled, q)
        table.add(_row(p, R, f"moment_{q:g}", est, stderr=se, reference=limit_moment(law, q),
                       provenance=PROV_MOMENT))
    for q, v in s.quantiles.items():
        table.add(_row(p, R, f"quantile_{q:g}", v, reference=float(np.quantile(ref, q)),
                       provenance=PROV_QUANTILE))
    table.add(_row(p, R, "ks_limit", two_sample_ks(scaled, ref)))
    if batch is not None and config.t_grid:
        ck = dict(zip(batch.checkpoint_levels.tolist(), range(batch.checkpoint_levels.size)))
        for t, lev in zip(config.t_grid, levels):
            vals = batch.checkpoint_Y[:, ck[lev]] / p.n**const.nu
            cs = summarize(vals)
            ref_t = mean_curve_Y(t, p.m, p.rho)
            table.add(_row(p, R, f"curve_Y_t{t:g}", cs.mean, stderr=cs.stderr, reference=ref_t,
                           provenance=PROV_CURVE,
                           passed=_rel_ok(cs.mean, ref_t, config.curve_tolerance)))
        table.samples["curve_Y"] = batch.checkpoint_Y / p.n**const.nu
    return table


def run_sweep(config: ExperimentConfig, n_grid) -> ResultTable:
    """Repeat the distribution experiment over several graph sizes."""
    out = ResultTable()
    for n in n_grid:
        params = ModelParams(config.params.variant, config.params.m, config.params.rho, int(n),
                             config.params.master_seed)
        cfg = ExperimentConfig(**{**config.__dict__, "params": params})
        tab = run_distribution_experiment(cfg)
        out.extend(tab)
        out.samples[int(n)] = tab.samples
    return out


# ---------------------------------------------------------------------------
# normalising product


@nb.njit(cache=True)
def _beta_tilde_one(state, m, rho, K, uniform, kappa):
    lp = math.log(m)
    for j in range(2, K + 1):
        if uniform:
            b = 1.0 / j
        else:
            b = beta(state, m + rho, (2 * j - 3) * m + (j - 1) * rho)
        lp += math.log1p((m - 1) * b)
    return math.exp(lp - kappa * math.log(K))


@nb.njit(cache=True, parallel=True)
def _beta_tilde_batch(m, rho, K, uniform, kappa, seed, base, reps):
    out = np.empty(reps)
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        out[r] = _beta_tilde_one(state, m, rho, K, uniform, kappa)
    return out


def beta_tilde_batch(m: int, rho: float, K: int, replicates: int, master_seed: int,
                     stream_base: int = 0) -> np.ndarray:
    """Truncated ``K^-kappa * Phi_K`` for independent urn sequences."""
    if K < 100:
        raise ValueError(f"K must be >= 100, got {K}")
    kappa = derive_constants(m, rho).kappa
    uniform = math.isinf(rho)
    return _beta_tilde_batch(int(m), 0.0 if uniform else float(rho), int(K), uniform, kappa,
                             np.uint64(master_seed), stream_base, int(replicates))


def beta_tilde_sample(m: int, rho: float, K: int, stream: RngStream) -> float:
    """One draw of the truncated normaliser, consuming draws from ``stream``."""
    if K < 100:
        raise ValueError(f"K must be >= 100, got {K}")
    kappa = derive_constants(m, rho).kappa
    uniform = math.isinf(rho)
    return float(_beta_tilde_one(stream.state, int(m), 0.0 if uniform else float(rho), int(K),
                                 uniform, kappa))


def beta_tilde_constant(m: int, rho: float) -> float:
    """Mean normalising constant; ``beta_tilde / constant`` has mean one."""
    return phi_asymptotic_constant(m, rho)
