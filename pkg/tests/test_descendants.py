import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from desclab.descendants import (
    TraceOptions, count_descendants, extract_scaled_curves, simulate_recursion,
    simulate_recursion_batch, split_index, write_trace_csv,
)
from desclab.generators import Digraph, batch_descendants, gen_polya, gen_selfloop
from desclab.harness.stats import two_sample_ks
from desclab.rng import make_stream
from desclab.theory import ModelParams, derive_constants, limit_law, limit_moment, mean_curve_Y

FULL = TraceOptions("full")


def _closure_count(g: Digraph) -> int:
    """Reachability from vertex n by boolean matrix squaring (cubic oracle)."""
    n = g.n
    adj = np.zeros((n, n), dtype=bool)
    for k in range(2, n + 1):
        for t in g.out_edges(k):
            adj[k - 1, t - 1] = True
    reach = adj | np.eye(n, dtype=bool)
    while True:
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return int(reach[n - 1].sum())


# ---------------------------------------------------------------------------
# explicit graphs


def test_count_single_vertex():
    g = Digraph(n=1, m=2, allows_loops=False, targets=np.empty(0, dtype=np.int64))
    assert count_descendants(g) == 1


def test_count_two_vertices():
    g, _ = gen_polya(ModelParams("polya-urn", 3, 0.0, 2, 0), make_stream(0, 0))
    assert count_descendants(g) == 2


def test_count_against_transitive_closure():
    stream = make_stream(1, 0)
    for r in range(1000):
        g, _ = gen_polya(ModelParams("polya-urn", 2, 0.0, 50, 1), stream)
        assert count_descendants(g) == _closure_count(g)


def test_count_ignores_self_loops():
    stream = make_stream(2, 0)
    for _ in range(200):
        g, _ = gen_selfloop(ModelParams("self-loop", 2, 0.0, 40, 2), stream)
        assert count_descendants(g) == _closure_count(g)


# ---------------------------------------------------------------------------
# recursion


def _check_trace(tr):
    n, m = tr.n, tr.m
    Y, Z, J = tr.Y, tr.Z, tr.J
    assert Y[n - 1] == m and Y[0] == 0
    assert np.all((Z >= 0) & (Z <= Y))
    assert np.array_equal(J[1:], (Z[1:] >= 1).astype(J.dtype))
    for k in range(2, n):
        assert Y[k - 1] == Y[k] - Z[k] + m * J[k]
    assert tr.X == 1 + int(J[1:].sum())
    assert np.all(tr.A >= 0)
    assert tr.A[n - 1] == 0
    assert np.all(np.diff(tr.A[1:]) <= 1e-12 * np.maximum(1.0, tr.A[1:-1]))
    assert np.allclose(tr.M, tr.W + tr.A, rtol=1e-14, atol=0)
    assert np.allclose(tr.W, tr.Phi * Y, rtol=1e-14, atol=0)
    assert np.all(tr.W >= 0)


@given(
    st.integers(2, 5).flatmap(lambda m: st.tuples(st.just(m), st.floats(-m + 0.05, 5.0))),
    st.integers(2, 400),
    st.integers(0, 2**32),
    st.booleans(),
)
def test_trace_invariants(mr, n, seed, uniform):
    m, rho = mr
    p = ModelParams("uniform" if uniform else "polya-urn", m, rho, n, seed)
    tr = simulate_recursion(p, make_stream(seed, 0), FULL)
    _check_trace(tr)
    assert 2 <= tr.X <= n


def test_bottom_level_absorbs_everything():
    tr = simulate_recursion(ModelParams("uniform", 3, 0.0, 30, 1), make_stream(1, 0), FULL)
    assert tr.B[1] == 1.0
    assert tr.Z[1] == tr.Y[1]
    assert tr.Y[0] == 0


def test_recursion_rejects_other_variants():
    with pytest.raises(ValueError):
        simulate_recursion(ModelParams("sequential", 2, 0.0, 10, 0), make_stream(0, 0))
    with pytest.raises(ValueError):
        simulate_recursion(ModelParams("polya-urn", 1, 0.0, 10, 0), make_stream(0, 0))


def test_single_vertex_recursion():
    assert simulate_recursion(ModelParams("polya-urn", 2, 0.0, 1, 0), make_stream(0, 0)).X == 1


def test_full_and_scalar_traces_identical():
    p = ModelParams("polya-urn", 3, 0.5, 5000, 4)
    levels = (10, 100, 1000)
    full = simulate_recursion(p, make_stream(4, 9), TraceOptions("full", checkpoints=levels))
    scalar = simulate_recursion(p, make_stream(4, 9), TraceOptions("scalar", checkpoints=levels))
    assert full.X == scalar.X and full.Y_n1 == scalar.Y_n1
    assert full.Xi == pytest.approx(scalar.Xi, rel=1e-12)
    assert full.P0 == pytest.approx(scalar.P0, rel=1e-12)
    assert full.checkpoints == scalar.checkpoints == {c: int(full.Y[c]) for c in levels}


def test_batch_matches_single_runs():
    p = ModelParams("polya-urn", 2, 0.0, 3000, 8)
    batch = simulate_recursion_batch(p, 5, 100, TraceOptions("scalar"))
    for r in range(5):
        tr = simulate_recursion(p, make_stream(8, 100 + r), TraceOptions("scalar"))
        assert batch.X[r] == tr.X and batch.Y_n1[r] == tr.Y_n1


def test_recursion_and_graph_pipelines_agree():
    p = ModelParams("polya-urn", 2, 0.0, 100, 3)
    reps = 100_000
    rec = simulate_recursion_batch(p, reps, 0, TraceOptions("x", with_xi=False)).X
    bfs = batch_descendants(1, 100, 2, 0.0, np.uint64(3), 1 << 40, reps, True)
    assert two_sample_ks(rec, bfs) < 0.01


@pytest.mark.parametrize("variant,rho", [("polya-urn", 0.0), ("polya-urn", 2.5), ("uniform", 0.0)])
def test_level_skipping_preserves_law(variant, rho):
    p = ModelParams(variant, 2, rho, 20_000, 6)
    a = simulate_recursion_batch(p, 4000, 0, TraceOptions("x", with_xi=True, skip_levels=True))
    b = simulate_recursion_batch(p, 4000, 1 << 40, TraceOptions("scalar"))
    assert two_sample_ks(a.X, b.X) < 0.05
    assert two_sample_ks(a.Y_n1, b.Y_n1) < 0.05
    assert two_sample_ks(a.Xi, b.Xi) < 0.05


def test_stop_at_split_level_keeps_crossing_count_law():
    p = ModelParams("polya-urn", 2, 0.0, 50_000, 7)
    a = simulate_recursion_batch(p, 4000, 0, TraceOptions("x", with_xi=False, stop_at_n1=True))
    b = simulate_recursion_batch(p, 4000, 1 << 40, TraceOptions("x", with_xi=False))
    assert two_sample_ks(a.Y_n1, b.Y_n1) < 0.05


def test_mean_scaled_descendants_at_one_million():
    p = ModelParams("polya-urn", 2, 0.0, 1_000_000, 42)
    X = simulate_recursion_batch(p, 2000, 0, TraceOptions("x", with_xi=False)).X
    ref = limit_moment(limit_law(2, 0.0), 1.0)
    assert abs(np.mean(X / 100.0) / ref - 1) < 0.10


def test_split_index():
    assert split_index(10**6) == math.floor(10**6 / math.log(10**6))
    assert split_index(2) == 1
    assert split_index(1) == 1


# ---------------------------------------------------------------------------
# scaled curves


def test_curve_constant_extension():
    p = ModelParams("polya-urn", 2, 0.0, 1000, 1)
    tr = simulate_recursion(p, make_stream(1, 0), FULL)
    nu = derive_constants(2, 0.0).nu
    beyond = (tr.n - 1) / tr.n**nu
    c = extract_scaled_curves(tr, [beyond, beyond * 2, beyond * 50])
    assert np.all(c.Y == c.Y[0]) and np.all(c.A == c.A[0]) and np.all(c.P == c.P[0])


def test_curve_at_split_level_equals_xi():
    p = ModelParams("polya-urn", 2, 0.0, 5000, 3)
    tr = simulate_recursion(p, make_stream(3, 0), FULL)
    nu = derive_constants(2, 0.0).nu
    c = extract_scaled_curves(tr, [tr.n1 / tr.n**nu])
    assert c.W[0] == pytest.approx(tr.Xi, rel=1e-9)


def test_curve_interpolates_linearly():
    p = ModelParams("polya-urn", 2, 0.0, 1000, 2)
    tr = simulate_recursion(p, make_stream(2, 0), FULL)
    s = tr.n ** derive_constants(2, 0.0).nu
    c = extract_scaled_curves(tr, [40.5 / s])
    assert c.Y[0] * s == pytest.approx(0.5 * (tr.Y[40] + tr.Y[41]))


def test_curves_need_full_trace():
    tr = simulate_recursion(ModelParams("polya-urn", 2, 0.0, 100, 0), make_stream(0, 0))
    with pytest.raises(ValueError):
        extract_scaled_curves(tr, [1.0])


def test_mean_curve_at_one_million():
    n, reps = 1_000_000, 2000
    p = ModelParams("polya-urn", 2, 0.0, n, 11)
    level = int(math.floor(1.0 * n ** (1 / 3)))
    batch = simulate_recursion_batch(p, reps, 0, TraceOptions("x", with_xi=False, checkpoints=(level,)))
    est = batch.checkpoint_Y[:, 0].mean() / n ** (1 / 3)
    assert abs(est / mean_curve_Y(1.0, 2, 0.0) - 1) < 0.05


# ---------------------------------------------------------------------------
# residual and hit-rate diagnostics


def test_residual_after_compensator_shrinks():
    sds = []
    for n in (10_000, 100_000, 1_000_000):
        p = ModelParams("polya-urn", 2, 0.0, n, 12)
        b = simulate_recursion_batch(p, 200, 0, TraceOptions("scalar"))
        L0 = b.X - 1 - b.P0
        assert np.allclose(b.P0 + L0 + 1, b.X)
        sds.append(np.std(L0 / n ** (1 / 3), ddof=1))
        assert abs(np.mean(L0 / n ** (1 / 3))) < 0.5
    assert sds[0] > sds[1] > sds[2]


def test_hit_rate_decay_shape():
    n, reps = 10_000, 2000
    p = ModelParams("polya-urn", 2, 0.0, n, 13)
    grid = [n // 2**j for j in range(1, 8)]
    hits = np.zeros(len(grid))
    stream = make_stream(13, 0)
    for _ in range(reps):
        tr = simulate_recursion(p, stream, FULL)
        hits += tr.J[grid]
    rate = hits / reps
    kappa = derive_constants(2, 0.0).kappa
    const = rate * np.array(grid, dtype=float) ** (1 + kappa) / n**kappa
    assert np.all(np.isfinite(const)) and const.max() < 10
    assert np.all(np.diff(rate) > 0)


# ---------------------------------------------------------------------------
# export


def test_trace_csv(tmp_path):
    tr = simulate_recursion(ModelParams("polya-urn", 2, 0.0, 20, 0), make_stream(0, 0), FULL)
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,Y,Z,J,Phi,W,A,M,P"
    assert len(lines) == 21
    assert lines[20].split(",")[1] == "2"


def test_trace_csv_needs_arrays(tmp_path):
    tr = simulate_recursion(ModelParams("polya-urn", 2, 0.0, 20, 0), make_stream(0, 0))
    with pytest.raises(ValueError):
        write_trace_csv(tr, tmp_path / "t.csv")
