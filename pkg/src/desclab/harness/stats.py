"""Summary statistics and goodness-of-fit measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


def two_sample_ks(a, b) -> float:
    """Supremum distance between the empirical CDFs of ``a`` and ``b``.

    Ties are handled by evaluating both CDFs at every distinct pooled value.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("two_sample_ks needs nonempty samples")
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p: float


def merge_cells(observed, expected, minimum: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Pool adjacent cells until every expected count reaches ``minimum``."""
    obs_out: list[float] = []
    exp_out: list[float] = []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= minimum:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            obs_out[-1] += o_acc
            exp_out[-1] += e_acc
        else:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
    return np.asarray(obs_out), np.asarray(exp_out)


def chi_square(observed, expected) -> ChiSquareResult:
    """Pearson goodness of fit.

    ``expected`` may be probabilities or counts; it is rescaled to the observed
    total.  Cells with expected count below 5 are merged with neighbours.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if observed.size == 0 or observed.shape != expected.shape:
        raise ValueError("chi_square needs nonempty arrays of equal shape")
    if np.any(expected < 0) or expected.sum() <= 0:
        raise ValueError("expected values must be nonnegative with a positive total")
    expected = expected * (observed.sum() / expected.sum())
    obs, exp = merge_cells(observed, expected)
    if obs.size < 2:
        return ChiSquareResult(0.0, 0, 1.0)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = int(obs.size - 1)
    return ChiSquareResult(stat, dof, float(sps.chi2.sf(stat, dof)))


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    stderr: float | None
    variance: float | None
    quantiles: dict[float, float]


def summarize(sample, quantiles=(0.1, 0.5, 0.9)) -> Summary:
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    if x.size > 1:
        var = float(np.var(x, ddof=1))
        se = math.sqrt(var / x.size)
    else:
        var = se = None
    qs = {float(q): float(np.quantile(x, q)) for q in quantiles}
    return Summary(int(x.size), float(np.mean(x)), se, var, qs)


def moment_stderr(sample, p: float) -> tuple[float, float | None]:
    """Estimate and standard error of ``E |X|^p``."""
    x = np.abs(np.asarray(sample, dtype=float)) ** p
    if x.size < 2:
        return float(np.mean(x)), None
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))
