"""Yule-type branching with ``m``-fold splits, observed on the time scale ``x = e^-t``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import RngStream, STATE_SIZE, init_state, std_exponential

PARTICLE_CAP = 100_000_000


class YuleResourceError(RuntimeError):
    """Raised when a run would exceed the particle cap."""


@dataclass(frozen=True)
class YuleSnapshot:
    m: int
    x: float
    count: int

    @property
    def scaled(self) -> float:
        return self.x ** (self.m - 1) * self.count


@nb.njit(cache=True)
def _run(state, m, horizons, cap, out):
    """Counts at increasing time horizons from a single event sequence.

    Returns 0 on success and -1 if the cap was hit.
    """
    count = m
    time = 0.0
    h = 0
    nh = len(horizons)
    while h < nh:
        wait = std_exponential(state) / count
        while h < nh and time + wait > horizons[h]:
            out[h] = count
            h += 1
        if h == nh:
            break
        time += wait
        count += m - 1
        if count > cap:
            return -1
    return 0


@nb.njit(cache=True, parallel=True)
def _batch(m, t, seed, base, reps, cap):
    out = np.empty(reps, dtype=np.int64)
    flags = np.zeros(reps, dtype=np.int64)
    horizons = np.array([t])
    for r in nb.prange(reps):
        state = np.empty(STATE_SIZE, dtype=np.uint64)
        init_state(state, np.uint64(seed), np.uint64(base + r))
        row = np.zeros(1, dtype=np.int64)
        flags[r] = _run(state, m, horizons, cap, row)
        out[r] = row[0]
    return out, flags


def _check(m: int, x: float) -> None:
    if int(m) != m or m < 2:
        raise ValueError(f"m must be an integer >= 2, got {m}")
    if not 0.0 < x <= 1.0:
        raise ValueError(f"x must lie in (0, 1], got {x}")


def yule_at(m: int, x: float, stream: RngStream, cap: int = PARTICLE_CAP) -> YuleSnapshot:
    """Population at time ``-log x`` of a process started from ``m`` particles."""
    _check(m, x)
    out = yule_path(m, [x], stream, cap)
    return out[0]


def yule_path(m: int, xs, stream: RngStream, cap: int = PARTICLE_CAP) -> list[YuleSnapshot]:
    """Snapshots at every ``x`` in ``xs`` from one common event sequence."""
    xs = [float(x) for x in xs]
    for x in xs:
        _check(m, x)
    order = np.argsort(-np.asarray(xs), kind="stable")
    horizons = np.array([-math.log(xs[i]) for i in order])
    counts = np.zeros(len(xs), dtype=np.int64)
    if _run(stream.state, int(m), horizons, int(cap), counts) != 0:
        raise YuleResourceError(f"Yule run exceeded the cap of {cap} particles")
    result = [None] * len(xs)
    for j, i in enumerate(order):
        result[i] = YuleSnapshot(m=int(m), x=xs[i], count=int(counts[j]))
    return result


def yule_batch(
    m: int, x: float, replicates: int, master_seed: int, stream_base: int = 0,
    cap: int = PARTICLE_CAP,
) -> np.ndarray:
    """Counts from independent runs; run ``r`` uses stream ``stream_base + r``."""
    _check(m, x)
    counts, flags = _batch(int(m), -math.log(x), np.uint64(master_seed), stream_base, int(replicates), int(cap))
    if np.any(flags != 0):
        raise YuleResourceError(f"Yule run exceeded the cap of {cap} particles")
    return counts


def expected_count(m: int, x: float) -> float:
    """``E Y_x = m / x^(m-1)``."""
    _check(m, x)
    return m / x ** (m - 1)
