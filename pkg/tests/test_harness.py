import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from desclab.harness import (
    CHECKS, ExperimentConfig, ResultRow, ResultTable, VerificationReport, beta_tilde_batch,
    beta_tilde_constant, beta_tilde_sample, chi_square, read_results, resolve_checks,
    run_distribution_experiment, run_sweep, run_theory_battery, two_sample_ks, write_results,
)
from desclab.harness import battery
from desclab.harness.results import decode, encode, format_table
from desclab.harness.stats import merge_cells, moment_stderr, summarize
from desclab.rng import make_stream
from desclab.theory import ModelParams, derive_constants, expected_phi, lh_integrals

# ---------------------------------------------------------------------------
# statistics


def test_ks_identical_samples():
    x = make_stream(0, 0).normals(500)
    assert two_sample_ks(x, x) == 0.0


def test_ks_disjoint_points():
    assert two_sample_ks([0.0], [1.0]) == 1.0


def test_ks_handles_ties():
    assert two_sample_ks([1, 1, 2, 2], [1, 2, 2, 2]) == pytest.approx(0.25)


def test_ks_empty_rejected():
    with pytest.raises(ValueError):
        two_sample_ks([], [1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_ks_symmetric_and_bounded(a, b):
    d = two_sample_ks(a, b)
    assert 0.0 <= d <= 1.0
    assert d == two_sample_ks(b, a)


def test_chi_square_fair_die_p_values():
    ps = []
    for r in range(100):
        u = make_stream(1, r).uniforms(60_000)
        counts = np.bincount((u * 6).astype(int), minlength=6)
        ps.append(chi_square(counts, np.full(6, 1 / 6)).p)
    assert 0.2 <= np.median(ps) <= 0.8


def test_chi_square_detects_bias():
    counts = np.array([12000, 10000, 10000, 10000, 10000, 8000])
    assert chi_square(counts, np.full(6, 1 / 6)).p < 1e-10


def test_chi_square_merges_sparse_cells():
    obs, exp = merge_cells(np.array([1, 1, 10, 2, 2]), np.array([1.0, 2.0, 10.0, 1.0, 1.0]))
    assert exp.min() >= 5
    assert obs.sum() == 16 and exp.sum() == 15
    res = chi_square(np.array([3, 3, 3]), np.array([1.0, 1.0, 1.0]))
    assert res.dof == 0 and res.p == 1.0


def test_chi_square_rejects_bad_input():
    with pytest.raises(ValueError):
        chi_square([], [])
    with pytest.raises(ValueError):
        chi_square([1, 2], [0.5, -0.5])


def test_summary_single_replicate():
    s = summarize([3.0])
    assert s.mean == 3.0 and s.stderr is None and s.variance is None
    assert moment_stderr([2.0], 2.0) == (4.0, None)


# ---------------------------------------------------------------------------
# result tables


def _table(cls=ResultTable):
    t = cls()
    t.add(ResultRow("mean_scaled_X", "polya-urn", 2, 0.0, 1000, 10, 2.1, 0.05, 2.19416,
                    "limit law moment", True, 0.1))
    t.add(ResultRow("ks_limit", "polya-urn", 2, 0.0, 1000, 10, 0.123456789012345678))
    t.add(ResultRow("uniform_row", "uniform", 3, math.inf, 50, 1, 1 / 3, None, None, None, False))
    return t


def test_empty_table_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_results(ResultTable(), path)
    assert path.read_bytes() == b"name,variant,m,rho,n,replicates,estimate,stderr,reference,provenance,pass\n"


@pytest.mark.parametrize("fmt", ["csv", "json"])
@pytest.mark.parametrize("cls", [ResultTable, VerificationReport])
def test_round_trip(tmp_path, fmt, cls):
    t = _table(cls)
    path = tmp_path / f"t.{fmt}"
    write_results(t, path, fmt)
    back = read_results(path)
    assert type(back) is cls
    if cls is ResultTable:
        for r in t.rows:
            r.tolerance = None
    assert back.rows == t.rows


def test_csv_and_json_encode_same_rows():
    t = _table()
    assert decode(encode(t, "csv"), "csv").rows == decode(encode(t, "json"), "json").rows


def test_identical_tables_identical_bytes(tmp_path):
    write_results(_table(), tmp_path / "a.csv")
    write_results(_table(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_float_precision():
    text = encode(_table(), "csv")
    assert "0.12345678901234568" in text
    assert "\r" not in text


def test_reference_requires_provenance():
    with pytest.raises(ValueError):
        ResultTable().add(ResultRow("x", "polya-urn", 2, 0.0, 10, 1, 1.0, reference=1.0))


def test_write_error_mentions_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_results(_table(), tmp_path / "missing" / "t.csv")


def test_format_table_renders_rows():
    out = format_table(_table())
    assert out.splitlines()[0].startswith("name")
    assert len(out.splitlines()) == 4


def test_all_passed():
    t = _table()
    assert not t.all_passed
    t.rows.pop()
    assert t.all_passed


# ---------------------------------------------------------------------------
# experiment configuration


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(replicates=0)
    with pytest.raises(ValueError):
        ExperimentConfig(t_grid=[1.0, -1.0])
    with pytest.raises(ValueError):
        ExperimentConfig(pipeline="magic")
    assert ExperimentConfig(pipeline="bfs").pipeline == "graph-bfs"


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(params=ModelParams("polya-urn", 3, 1.0, 500, 9), replicates=7,
                           t_grid=[0.5, 1.0], checks=["a"])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.from_file(path)
    assert back == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# distribution experiments


def test_distribution_experiment_rows():
    cfg = ExperimentConfig(params=ModelParams("polya-urn", 2, 0.0, 10_000, 3), replicates=300,
                           t_grid=[0.5, 1.0], reference_size=100_000)
    t = run_distribution_experiment(cfg)
    names = [r.name for r in t.rows]
    for name in ("mean_scaled_X", "var_scaled_X", "moment_1", "moment_2", "quantile_0.5",
                 "ks_limit", "curve_Y_t0.5", "curve_Y_t1"):
        assert name in names
    for r in t.rows:
        assert r.reference is None or r.provenance
    assert t.samples["scaled"].size == 300
    assert t.row("mean_scaled_X").passed


def test_single_replicate_stderr_undefined():
    cfg = ExperimentConfig(params=ModelParams("polya-urn", 2, 0.0, 1000, 3), replicates=1,
                           reference_size=1000)
    row = run_distribution_experiment(cfg).row("mean_scaled_X")
    assert row.stderr is None


def test_experiment_is_deterministic():
    cfg = ExperimentConfig(params=ModelParams("polya-urn", 3, 1.0, 5000, 8), replicates=100,
                           reference_size=10_000)
    assert encode(run_distribution_experiment(cfg), "csv") == encode(run_distribution_experiment(cfg), "csv")


def test_m1_requires_opt_in():
    cfg = ExperimentConfig(params=ModelParams("sequential", 1, 0.0, 1000, 0), replicates=10,
                           pipeline="graph-bfs")
    with pytest.raises(ValueError, match="m >= 2"):
        run_distribution_experiment(cfg)
    cfg.allow_m1 = True
    t = run_distribution_experiment(cfg)
    assert [r.name for r in t.rows] == ["mean_X_over_log_n", "mean_X"]


def test_graph_pipeline_experiment():
    cfg = ExperimentConfig(params=ModelParams("self-loop", 2, 0.0, 2000, 1), replicates=200,
                           pipeline="graph-bfs", reference_size=10_000)
    t = run_distribution_experiment(cfg)
    assert t.row("mean_scaled_X").estimate > 0


def test_sweep_ks_improves():
    cfg = ExperimentConfig(params=ModelParams("polya-urn", 2, 0.0, 1000, 21), replicates=3000)
    t = run_sweep(cfg, [100, 1_000_000])
    ks = [r.estimate for r in t.rows if r.name == "ks_limit"]
    assert ks[0] > ks[1]
    assert set(t.samples) == {100, 1_000_000}


# ---------------------------------------------------------------------------
# normalising product


@pytest.fixture(scope="module")
def beta_tilde_pair():
    # common random numbers: the K = 1e5 run reuses the first draws of the K = 1e4 run
    return beta_tilde_batch(2, 0.0, 10_000, 10_000, 5), beta_tilde_batch(2, 0.0, 100_000, 10_000, 5)


def test_beta_tilde_positive_and_mean(beta_tilde_pair):
    x = beta_tilde_pair[1]
    assert np.all(x > 0)
    c = beta_tilde_constant(2, 0.0)
    assert c == pytest.approx(4 / math.sqrt(math.pi))
    ratio = x / c
    se = ratio.std(ddof=1) / math.sqrt(x.size)
    assert abs(ratio.mean() - 1) < 4 * se


def test_beta_tilde_matches_exact_finite_k_mean(beta_tilde_pair):
    K = 10_000
    x = beta_tilde_pair[0]
    kappa = derive_constants(2, 0.0).kappa
    assert abs(x.mean() - expected_phi(K, 2, 0.0) / K**kappa) < 4 * x.std(ddof=1) / math.sqrt(x.size)


def test_beta_tilde_truncation_stability(beta_tilde_pair):
    a, b = beta_tilde_pair
    assert abs(b.mean() / a.mean() - 1) < 0.01


def test_beta_tilde_sample_consumes_stream():
    s = make_stream(4, 0)
    a = beta_tilde_sample(3, 1.0, 200, s)
    b = beta_tilde_sample(3, 1.0, 200, s)
    assert a != b
    assert a == beta_tilde_sample(3, 1.0, 200, make_stream(4, 0))
    assert beta_tilde_batch(3, 1.0, 200, 1, 4, 0)[0] == a
    with pytest.raises(ValueError):
        beta_tilde_sample(2, 0.0, 50, s)


# ---------------------------------------------------------------------------
# battery


def test_resolve_checks():
    assert resolve_checks("all") == list(CHECKS.values())
    assert resolve_checks("c,a") == ["expected_S", "beta_moments"]
    assert resolve_checks(["yule", "b"]) == ["expected_phi", "yule"]
    with pytest.raises(ValueError):
        resolve_checks("z")


def test_stream_ranges_disjoint():
    starts = sorted(battery.stream_range(name) for name in CHECKS.values())
    assert all(b - a >= 1 << 40 for a, b in zip(starts, starts[1:]))


def test_adding_checks_does_not_perturb_others():
    base = ExperimentConfig(params=ModelParams(master_seed=7), scale="quick", checks=["a"])
    alone = run_theory_battery(base)
    base.checks = ["a", "c"]
    together = run_theory_battery(base)
    assert alone.rows == [r for r in together.rows if r.name.startswith("expected_S.")]


def test_battery_report_deterministic_and_passing():
    cfg = ExperimentConfig(params=ModelParams(master_seed=7), scale="quick", checks=["a", "b", "c", "e", "f"])
    rep1 = run_theory_battery(cfg)
    rep2 = run_theory_battery(cfg)
    assert encode(rep1, "csv") == encode(rep2, "csv")
    assert isinstance(rep1, VerificationReport)
    for r in rep1.rows:
        assert r.passed, r.name
        assert r.reference is None or r.provenance


def test_battery_records_failures_and_continues(monkeypatch):
    def boom(ctx):
        raise RuntimeError("resource exhausted")

    monkeypatch.setitem(battery.CHECK_FUNCS, "expected_S", boom)
    cfg = ExperimentConfig(params=ModelParams(master_seed=7), scale="quick", checks=["a", "b"])
    rep = run_theory_battery(cfg)
    assert rep.rows[0].name == "expected_S.expected_S_error"
    assert rep.rows[0].passed is False and "resource exhausted" in rep.rows[0].provenance
    assert any(r.name.startswith("expected_phi.") for r in rep.rows)
    assert not rep.all_passed


def test_lh_sum_means_approach_integrals():
    m, rho, s, t, y = 2, 0.0, 0.5, 2.0, 1.0
    lam = 1e8 ** derive_constants(m, rho).nu
    h, i = battery.lh_sum_means(m, rho, lam, y, int(s * lam), int(t * lam))
    lh, li = lh_integrals(s, t, y, m, rho)
    assert h == pytest.approx(lh, rel=0.01) and i == pytest.approx(li, rel=0.01)


def test_s_concentration_within_radius():
    rows = battery.check_s_concentration(battery.Ctx(seed=3, quick=True))
    assert rows[0].passed
