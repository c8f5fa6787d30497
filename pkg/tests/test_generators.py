import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from desclab.generators import (
    Digraph, batch_selfloop_counts, batch_targets, gen_polya, gen_selfloop, gen_sequential,
    gen_uniform, generate, read_edge_list, resolve_target, variant_code, write_edge_list,
)
from desclab.harness.battery import exact_target_distribution, tuple_index
from desclab.harness.stats import chi_square
from desclab.rng import make_stream
from desclab.theory import ModelParams


def _params(variant, m=2, rho=0.0, n=10, seed=0):
    return ModelParams(variant, m, rho, n, seed)


# ---------------------------------------------------------------------------
# small cases


@pytest.mark.parametrize("m", [1, 2, 5])
def test_sequential_two_vertices(m):
    g = gen_sequential(_params("sequential", m=m, n=2), make_stream(0, 0))
    assert np.all(g.targets == 1) and g.targets.size == m


def test_sequential_single_vertex():
    g = gen_sequential(_params("sequential", n=1), make_stream(0, 0))
    assert g.targets.size == 0
    assert g.degrees().sum() == 0


def test_uniform_two_vertices():
    g = gen_uniform(3, 2, make_stream(0, 0))
    assert np.all(g.targets == 1)


def test_selfloop_single_vertex():
    g, trace = gen_selfloop(_params("self-loop", m=3, n=1), make_stream(0, 0))
    assert g.root_loops == 3
    assert trace.N[1] == 3
    assert np.array_equal(g.out_edges(1), [1, 1, 1])


def test_out_edges_bounds():
    g = gen_sequential(_params("sequential", n=5), make_stream(0, 0))
    assert g.out_edges(5).size == 2
    with pytest.raises(IndexError):
        g.out_edges(6)


def test_generator_parameter_checks():
    with pytest.raises(ValueError):
        gen_polya(_params("sequential"), make_stream(0, 0))
    with pytest.raises(ValueError):
        gen_polya(_params("polya-urn", m=1), make_stream(0, 0))
    with pytest.raises(ValueError):
        gen_uniform(1, 10, make_stream(0, 0))


def test_digraph_immutable():
    g = gen_sequential(_params("sequential"), make_stream(0, 0))
    with pytest.raises(ValueError):
        g.targets[0] = 1


# ---------------------------------------------------------------------------
# exact distributions


def test_target_resolution_half_open():
    S = np.array([0.0, 0.25, 1.0])
    assert resolve_target(S, 0.25) == 2
    assert resolve_target(S, 0.0) == 1
    assert resolve_target(S, 0.2499) == 1


def test_exact_enumeration_sums_to_one():
    probs = exact_target_distribution(4, 2, 0.0)
    assert probs.size == 36
    assert probs.sum() == pytest.approx(1.0, abs=1e-14)


def test_exact_enumeration_first_step():
    # vertex 3, first edge: weights (d1, d2) = (2, 2) at rho = 0 -> 1/2 each
    probs = exact_target_distribution(3, 2, 0.0).reshape(2, 2)
    # second edge sees d + placed endpoints: (3, 2) after hitting vertex 1
    assert probs[0, 0] == pytest.approx(0.5 * 3 / 5)
    assert probs[0, 1] == pytest.approx(0.5 * 2 / 5)


@pytest.mark.parametrize("code", [0, 1])
def test_pa_equals_pu_chi_square(code):
    n, m, rho = 4, 2, 0.0
    probs = exact_target_distribution(n, m, rho)
    t = batch_targets(code, n, m, rho, np.uint64(3), 0, 1_000_000, True)
    counts = np.bincount(tuple_index(t, n, m), minlength=probs.size)
    assert chi_square(counts, probs).p > 1e-3


def test_sequential_fast_and_scan_agree():
    n, m, rho = 6, 2, 1.0
    probs = exact_target_distribution(n, m, rho)
    for fast, base in ((True, 0), (False, 1 << 32)):
        t = batch_targets(0, n, m, rho, np.uint64(5), base, 1_000_000, fast)
        counts = np.bincount(tuple_index(t, n, m), minlength=probs.size)
        assert chi_square(counts, probs).p > 1e-3


def test_sequential_negative_rho_against_enumeration():
    n, m, rho = 5, 2, -1.5
    probs = exact_target_distribution(n, m, rho)
    t = batch_targets(0, n, m, rho, np.uint64(6), 0, 400_000, True)
    counts = np.bincount(tuple_index(t, n, m), minlength=probs.size)
    assert chi_square(counts, probs).p > 1e-3


def test_polya_conditional_first_target():
    # given the urn variables, vertex k's first edge lands on i w.p. B_i prod_{j=i+1}^{k-1}(1-B_j)
    n, k, reps = 5, 5, 40_000
    resid = np.zeros((reps, k - 1))
    stream = make_stream(7, 0)
    for r in range(reps):
        g, tr = gen_polya(_params("polya-urn", n=n), stream)
        B = tr.B
        p = np.array([B[i] * np.prod(1 - B[i + 1:k]) for i in range(1, k)])
        hit = np.zeros(k - 1)
        hit[g.out_edges(k)[0] - 1] = 1
        resid[r] = hit - p
    se = resid.std(axis=0, ddof=1) / math.sqrt(reps)
    assert np.all(np.abs(resid.mean(axis=0)) < 4 * se)


def test_uniform_marginal_chi_square():
    k, reps = 10, 500_000
    t = batch_targets(3, k, 2, 0.0, np.uint64(8), 0, reps, True)
    last = t[:, -2:].ravel()
    counts = np.bincount(last - 1, minlength=k - 1)
    assert chi_square(counts, np.full(k - 1, 1 / (k - 1))).p > 1e-3


def test_uniform_stopping_rule_telescopes():
    k = 12
    for i in range(1, k):
        p = Fraction(1, i) if i > 1 else Fraction(1)
        for j in range(i + 1, k):
            p *= 1 - Fraction(1, j)
        assert p == Fraction(1, k - 1)


def test_selfloop_counts_decay_like_inverse_index():
    N = batch_selfloop_counts(200, 2, 0.0, np.uint64(9), 0, 100_000)
    e10, e100 = N[:, 10].mean(), N[:, 100].mean()
    assert 0 < e100 < e10
    assert 5 < e10 / e100 < 20
    assert N[:, 1].min() >= 2


def test_selfloop_degree_sum():
    g, trace = gen_selfloop(_params("self-loop", m=3, n=50), make_stream(1, 1))
    assert g.degrees().sum() == 2 * 3 * 50
    assert np.array_equal(g.self_loops()[2:], trace.N[2:])


# ---------------------------------------------------------------------------
# invariants


variant_params = st.tuples(
    st.sampled_from(["sequential", "polya-urn", "self-loop", "uniform"]),
    st.integers(2, 5),
    st.floats(-1.9, 5.0),
    st.integers(2, 300),
    st.integers(0, 2**32),
    st.booleans(),
)


@given(variant_params)
def test_digraph_invariants(args):
    variant, m, rho, n, seed, fast = args
    p = ModelParams(variant, m, rho, n, seed)
    s = make_stream(seed, 0)
    if variant == "sequential":
        g = gen_sequential(p, s, fast=fast)
    elif variant == "polya-urn":
        g, tr = gen_polya(p, s, log_space=fast)
        assert tr.B[1] == 1.0
        assert np.all((tr.B[2:] > 0) & (tr.B[2:] < 1))
        assert tr.S[0] == 0.0 and tr.S[n - 1] == 1.0
        assert np.all(np.diff(tr.S[1:]) > 0)
    elif variant == "self-loop":
        g, tr = gen_selfloop(p, s, fast=fast)
        assert np.all((tr.N[1:] >= 0) & (tr.N[1:] <= m))
    else:
        g = gen_uniform(m, n, s)
    g.check()
    assert g.allows_loops == (variant == "self-loop")


def test_generate_dispatch_and_determinism():
    for variant in ("sequential", "polya-urn", "self-loop", "uniform"):
        p = _params(variant, n=200, seed=4)
        a = generate(p, make_stream(4, 0))
        b = generate(p, make_stream(4, 0))
        assert np.array_equal(a.targets, b.targets)
        assert variant_code(variant) in (0, 1, 2, 3)


def test_log_space_products_match():
    p = _params("polya-urn", n=2000, seed=2)
    _, a = gen_polya(p, make_stream(2, 0))
    _, b = gen_polya(p, make_stream(2, 0), log_space=True)
    assert np.allclose(a.S, b.S, rtol=1e-10, atol=0)


# ---------------------------------------------------------------------------
# edge list export


def test_edge_list_round_trip(tmp_path):
    g, _ = gen_selfloop(_params("self-loop", n=20, seed=5), make_stream(5, 0))
    path = tmp_path / "g.tsv"
    write_edge_list(g, path, rho=0.0, variant="self-loop", seed=5)
    text = path.read_text()
    assert text.startswith("# pa-graph n=20 m=2 rho=0.0 variant=self-loop seed=5\n")
    header, edges = read_edge_list(path)
    assert header == {"n": "20", "m": "2", "rho": "0.0", "variant": "self-loop", "seed": "5"}
    assert edges[:2] == [(1, 1), (1, 1)]
    assert [t for _, t in edges[2:]] == g.targets.tolist()
    assert len(edges) == 2 + 2 * 19


def test_edge_list_write_error(tmp_path):
    g = gen_uniform(2, 3, make_stream(0, 0))
    with pytest.raises(OSError, match="cannot write"):
        write_edge_list(g, tmp_path / "missing" / "g.tsv", rho=math.inf, variant="uniform", seed=0)


def test_digraph_check_catches_bad_target():
    bad = Digraph(n=3, m=1, allows_loops=False, targets=np.array([1, 3]))
    with pytest.raises(AssertionError):
        bad.check()
