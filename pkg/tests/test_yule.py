import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from desclab.descendants import TraceOptions, simulate_recursion_batch, split_index
from desclab.harness.stats import two_sample_ks
from desclab.rng import make_stream
from desclab.theory import ModelParams
from desclab.yule import YuleResourceError, expected_count, yule_at, yule_batch, yule_path


def _mean_within(sample, ref, k):
    sample = np.asarray(sample, dtype=float)
    return abs(sample.mean() - ref) < k * sample.std(ddof=1) / math.sqrt(sample.size)


def test_time_zero():
    snap = yule_at(3, 1.0, make_stream(0, 0))
    assert snap.count == 3 and snap.scaled == 3.0


def test_parameter_checks():
    with pytest.raises(ValueError):
        yule_at(1, 0.5, make_stream(0, 0))
    with pytest.raises(ValueError):
        yule_at(2, 0.0, make_stream(0, 0))
    with pytest.raises(ValueError):
        yule_at(2, 1.5, make_stream(0, 0))


@pytest.mark.parametrize("m,x", [(2, 0.1), (3, 0.2)])
def test_mean_count(m, x):
    c = yule_batch(m, x, 100_000, 5, 0)
    assert expected_count(m, x) == pytest.approx(m / x ** (m - 1))
    assert _mean_within(c, expected_count(m, x), 3)


# keep the expected count m / x^(m-1) below about 1e4
small_yule = st.integers(2, 6).flatmap(
    lambda m: st.tuples(st.just(m), st.floats((m / 1e4) ** (1 / (m - 1)), 1.0)))


@given(small_yule, st.integers(0, 2**32))
def test_counts_lattice(mx, sid):
    m, x = mx
    c = yule_batch(m, x, 200, 1, sid)
    assert np.all(c >= m)
    assert np.all((c - m) % (m - 1) == 0)


@given(st.integers(2, 5).flatmap(lambda m: st.tuples(
    st.just(m), st.lists(st.floats((m / 1e4) ** (1 / (m - 1)), 1.0), min_size=2, max_size=6))),
    st.integers(0, 2**32))
def test_path_monotone_in_x(mxs, sid):
    m, xs = mxs
    snaps = yule_path(m, xs, make_stream(3, sid))
    order = np.argsort(xs)
    counts = [snaps[i].count for i in order]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert [s.x for s in snaps] == [float(x) for x in xs]


def test_single_and_batch_agree():
    c = yule_batch(2, 0.3, 4, 9, 10)
    for r in range(4):
        assert yule_at(2, 0.3, make_stream(9, 10 + r)).count == c[r]


def test_particle_cap():
    with pytest.raises(YuleResourceError):
        yule_batch(2, 1e-6, 2, 0, 0, cap=1000)
    with pytest.raises(YuleResourceError):
        yule_at(3, 1e-3, make_stream(0, 0), cap=100)


def test_gamma_limit_m2():
    x = 1e-3
    c = yule_batch(2, x, 10_000, 4, 0)
    ref = make_stream(4, 1 << 40).gammas(2.0, 1.0, 100_000)
    assert two_sample_ks(x * c, ref) < 0.03


def test_gamma_limit_m3():
    x = 1e-2
    c = yule_batch(3, x, 10_000, 4, 1 << 20)
    ref = make_stream(4, 1 << 41).gammas(1.5, 2.0, 100_000)
    assert two_sample_ks(x**2 * c, ref) < 0.03


def test_coupling_with_crossing_count():
    n, reps = 1_000_000, 10_000
    p = ModelParams("polya-urn", 2, 0.0, n, 17)
    y = simulate_recursion_batch(p, reps, 0, TraceOptions("x", with_xi=False, stop_at_n1=True)).Y_n1
    x = (split_index(n) / n) ** 0.5
    yule = yule_batch(2, x, reps, 17, 1 << 40)
    assert two_sample_ks(y, yule) < 0.05
