import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_ci.harness import (
    RECORD_COLUMNS,
    ConfigError,
    ExperimentConfig,
    e1_matrix_check,
    e1_oracle,
    histogram_svg,
    ks_statistic,
    records_to_csv,
    run_experiment,
    skewness,
)
from lowrank_ci.linalg import normal_cdf, normal_quantile
from lowrank_ci.model import ProblemDims, rng_stream


def small(**kw):
    base = dict(m1=8, m2=7, r=2, sigma=0.1, lambda_spec=[4.0, 2.0], n_grid=[150], reps=4, master_seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------------ ks / skewness

def test_ks_examples():
    assert ks_statistic([0.0]) == pytest.approx(0.5)
    n = 1000
    sample = [normal_quantile((i - 0.5) / n) for i in range(1, n + 1)]
    # exactly 1 / (2N) in exact arithmetic; allow rounding at the boundary
    assert ks_statistic(sample) <= 0.0005 + 1e-12
    assert ks_statistic([10.0] * 5) == pytest.approx(normal_cdf(10.0), abs=1e-15)
    assert ks_statistic([10.0] * 5) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        ks_statistic([])


def test_ks_matches_direct_sup():
    x = np.sort(np.random.default_rng(4).standard_normal(50))
    phi = np.array([normal_cdf(v) for v in x])
    i = np.arange(1, 51)
    direct = max(np.max(i / 50 - phi), np.max(phi - (i - 1) / 50))
    assert ks_statistic(x) == pytest.approx(direct, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
def test_ks_in_unit_interval(sample):
    v = ks_statistic(sample)
    assert 0.0 <= v <= 1.0
    assert v == ks_statistic(list(reversed(sample)))


def test_skewness():
    assert skewness([1.0, 2.0, 3.0]) == pytest.approx(0.0, abs=1e-15)
    assert skewness([0.0, 0.0, 0.0, 3.0]) > 0
    g = np.random.default_rng(0).exponential(size=20000)
    assert skewness(g) == pytest.approx(2.0, abs=0.15)


# ------------------------------------------------------------------ E1 oracles

def test_e1_oracle_noiseless_and_rank_one():
    dims = ProblemDims(10, 10, 1, 200)
    assert e1_oracle(dims, [1.0], 0.0, 200, 50, rng_stream(0)) == (0.0, 0.0)
    mean, std = e1_oracle(dims, [1.0], 0.3, 200, 20000, rng_stream(1))
    target = 0.09 * dims.m_star / 200
    # the variance of (chi2_n / n^2) * chi2_m is computable in closed form
    var = 0.3**4 / 200**4 * ((2 * 200 + 200**2) * (2 * 18 + 18**2) - 200**2 * 18**2)
    assert abs(mean - target) <= 4 * math.sqrt(var / 20000)
    assert std == pytest.approx(math.sqrt(var), rel=0.05)


def test_e1_matrix_check_noiseless_and_scaling():
    dims = ProblemDims(6, 5, 1, 40)
    assert e1_matrix_check(dims, [2.0], 0.0, 40, 3, rng_stream(0))[0] == 0.0
    a, sa = e1_matrix_check(dims, [2.0], 0.5, 40, 1500, rng_stream(1))
    b, sb = e1_matrix_check(dims, [2.0], 0.5, 80, 1500, rng_stream(2))
    se = math.sqrt((sa / 2) ** 2 + sb**2) / math.sqrt(1500)
    assert abs(a / 2 - b) <= 3 * se


def test_e1_matrix_matches_oracle_small():
    dims = ProblemDims(8, 8, 2, 60)
    lam = [3.0, 1.5]
    a, sa = e1_matrix_check(dims, lam, 0.4, 60, 1500, rng_stream(5))
    b, sb = e1_oracle(dims, lam, 0.4, 60, 1500, rng_stream(6))
    assert abs(a - b) <= 3 * math.hypot(sa, sb) / math.sqrt(1500)


# ------------------------------------------------------------------ config

@pytest.mark.parametrize("bad,key", [
    ({"reps": 0}, "reps"),
    ({"n_grid": []}, "n_grid"),
    ({"alpha": 1.0}, "alpha"),
    ({"mode": "other"}, "mode"),
    ({"r": 7}, "r"),
    ({"sigma": -1.0}, "sigma"),
    ({"lambda_spec": [1.0]}, "lambda_spec"),
    ({"lambda_spec": [1.0, 2.0]}, "lambda_spec"),
    ({"solver": {"tolerance": 1}}, "solver"),
    ({"sigma": 0.0}, "solver"),
])
def test_config_errors_name_key(bad, key):
    with pytest.raises(ConfigError) as info:
        small(**bad)
    assert info.value.key == key and repr(key) in str(info.value)


def test_config_from_dict():
    d = small().to_dict()
    assert ExperimentConfig.from_dict(d) == small()
    nested = {"dims": {"m1": 8, "m2": 7, "r": 2}, "sigma": 0.1}
    assert ExperimentConfig.from_dict(nested).m2 == 7
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({**d, "replications": 3})
    assert info.value.key == "replications"
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({"m1": 3, "m2": 3, "r": 1})
    assert info.value.key == "sigma"


# ------------------------------------------------------------------ experiments

def test_run_is_deterministic_and_well_formed():
    cfg = small(mode="coverage")
    rec_a, rep_a = run_experiment(cfg)
    rec_b, _ = run_experiment(cfg)
    assert records_to_csv(rec_a) == records_to_csv(rec_b)
    assert [r.rep for r in rec_a] == [0, 1, 2, 3]
    for r in rec_a:
        assert r.converged and 0.0 <= r.dist2 <= 4 * cfg.r
        assert math.isfinite(r.t_oracle) and math.isfinite(r.t_plugin)
    s = rep_a.by_n(150)
    assert 0 <= s.coverage_rate <= 1 and 0 <= s.ks_oracle <= 1 and 0 <= s.ks_plugin <= 1
    assert s.excluded == 0 and s.records == 4
    assert s.mean_dist2 == pytest.approx(np.mean([r.dist2 for r in rec_a]))


def test_oracle_statistic_is_centred():
    from lowrank_ci.harness import build_model, oracle_scale

    cfg = small(reps=6)
    recs, _ = run_experiment(cfg)
    model = build_model(cfg)
    num = [r.t_oracle * oracle_scale(r.sigma2_hat, model.lambdas, model.dims.m_star, 150) for r in recs]
    # numerators are dist2 minus the Monte Carlo mean of dist2
    assert abs(np.sum(num)) <= 1e-12 * max(np.abs(num))
    assert num[0] == pytest.approx(recs[0].dist2 - np.mean([r.dist2 for r in recs]), rel=1e-10)


def test_workers_do_not_change_records():
    cfg = small(reps=5)
    serial, _ = run_experiment(cfg, workers=1)
    parallel, _ = run_experiment(cfg, workers=2)
    assert records_to_csv(serial) == records_to_csv(parallel)


def test_single_rep_and_noiseless_recovery():
    cfg = small(sigma=0.0, reps=1, n_grid=[400], lambda_spec=[400.0, 200.0], solver={"lambda_reg": 1e-4})
    recs, report = run_experiment(cfg)
    assert len(recs) == 1
    assert recs[0].dist2 <= 1e-8
    assert recs[0].covered is True
    assert report.by_n(400).records == 1


def test_zero_residual_variance_branch(monkeypatch):
    from lowrank_ci import harness

    monkeypatch.setattr(harness, "sigma_hat2", lambda *a: 0.0)
    cfg = small(sigma=0.0, reps=1, lambda_spec=[400.0, 200.0], solver={"lambda_reg": 1e-4})
    (rec,), _ = run_experiment(cfg)
    assert rec.t_plugin is None and rec.t_oracle is None
    assert rec.covered is (rec.dist2 == 0.0)


def test_solver_failures_are_flagged_not_raised(monkeypatch):
    from lowrank_ci import harness
    from lowrank_ci.errors import SolverError

    def boom(*a, **k):
        raise SolverError("breakdown", [])

    monkeypatch.setattr(harness, "solve_nuclear", boom)
    recs, report = run_experiment(small(reps=2))
    assert [r.converged for r in recs] == [False, False]
    assert all(math.isnan(r.dist2) for r in recs)
    assert report.by_n(150).excluded == 2


def test_e1_mode_has_no_records():
    cfg = small(mode="e1_oracle", reps=2000, m1=20, m2=20, sigma=0.0)
    recs, report = run_experiment(cfg)
    assert recs == [] and report.by_n(150).e1_mean == 0.0
    cfg = small(mode="e1_oracle", reps=4000)
    _, report = run_experiment(cfg)
    s = report.by_n(150)
    assert s.e1_mean == pytest.approx(s.e1_target, rel=0.05)


def test_records_csv_columns():
    recs, _ = run_experiment(small(reps=2))
    lines = records_to_csv(recs).split("\n")
    assert lines[0] == ",".join(RECORD_COLUMNS)
    assert lines[0].startswith("rep,n,dist2,t_oracle,t_plugin,covered,sigma2_hat,solver_iters,clamp_fired")
    row = lines[1].split(",")
    assert row[0] == "0" and row[1] == "150" and row[5] in ("true", "false")
    assert float(row[2]) == recs[0].dist2


def test_report_to_dict_is_json_ready(tmp_path):
    from lowrank_ci.io import read_json, write_json

    _, report = run_experiment(small(reps=2))
    p = tmp_path / "s.json"
    write_json(report.to_dict(), p)
    back = read_json(p)
    assert back["per_n"][0]["n"] == 150 and back["config"]["m1"] == 8


def test_histogram_svg_shape():
    svg = histogram_svg(np.random.default_rng(0).standard_normal(300), "t")
    root = ET.fromstring(svg)
    assert root.get("viewBox") == "0 0 640 480"
    ns = "{http://www.w3.org/2000/svg}"
    bars = root.findall(f".//{ns}rect[@class='bar']")
    assert len(bars) == 40
    assert root.findall(f".//{ns}polyline")
