import json
import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from nof1iv.errors import ConfigError, InvalidArgumentError
from nof1iv.experiment import (
    DEFAULT_ALPHAS,
    ExperimentConfig,
    aggregate_curves,
    bias_table,
    canonical_order,
    cell_design,
    cochran_armitage,
    manifest_path,
    nonstationarity_stress,
    read_records,
    record_line,
    records_frame,
    run_experiment,
)

SMALL = ExperimentConfig(models=("ARMA00", "ARMA10"), settings=(1, 3, 6, 8), n_datasets=5, n_perm=200, seed=7,
                         n_sweeps=5)


@pytest.fixture(scope="module")
def small_records():
    return run_experiment(SMALL)


def test_record_counts_and_null_beta(small_records):
    assert len(small_records) == 2 * 4 * 5
    assert [r["cell"] for r in small_records[::5]] == [f"{m}/s{s}" for m, s in SMALL.cells()]
    for r in small_records:
        assert not r["failed"]
        assert math.isfinite(r["raw"]["beta_itt"])
        if r["hypothesis"] == "null":
            assert r["beta_true"] == 0.0
    assert any(r["beta_true"] != 0 for r in small_records if r["hypothesis"] == "alt")


def test_design_respects_null_and_unit_root():
    rows = cell_design(SMALL, "ARMA10", 3)
    assert all(r["beta"] == 0.0 for r in rows)
    ur = ExperimentConfig(models=("SETAR1",), settings=(2,), n_datasets=4, unit_root=True, allow_nonstationary=True)
    for r in cell_design(ur, "SETAR1", 2):
        assert r["phi11"] == r["phi12"] == r["rho"] == 1.0
    with pytest.raises(ConfigError):
        ExperimentConfig(unit_root=True)


def test_config_validation_and_hash():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(settings=(9,))
    assert info.value.field == "settings"
    with pytest.raises(ConfigError):
        ExperimentConfig(n_perm=50)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    assert ExperimentConfig.from_dict(SMALL.to_dict()) == SMALL
    assert SMALL.config_hash() != ExperimentConfig(**{**SMALL.to_dict(), "seed": 8}).config_hash()


def test_worker_count_does_not_change_records(small_records):
    parallel = run_experiment(SMALL, workers=2)
    assert [record_line(r) for r in parallel] == [record_line(r) for r in small_records]


def test_file_output_and_resume(tmp_path, small_records):
    out = tmp_path / "records.ndjson"
    run_experiment(SMALL, out)
    full = out.read_text()
    assert full == "".join(record_line(r) + "\n" for r in small_records)
    man = json.loads(manifest_path(out).read_text())
    assert man["config_hash"] == SMALL.config_hash() and man["complete"]
    # truncate mid-way through a cell, including a half-written line
    lines = full.splitlines(keepends=True)
    out.write_text("".join(lines[:13]) + lines[13][:20])
    calls = []
    run_experiment(SMALL, out, progress=lambda cell, n: calls.append(cell))
    assert out.read_text() == full
    assert calls == [f"{m}/s{s}" for m, s in SMALL.cells()[2:]]
    other = ExperimentConfig(**{**SMALL.to_dict(), "seed": 8})
    with pytest.raises(ConfigError):
        run_experiment(other, out)


def test_read_records_tolerates_truncation(tmp_path):
    p = tmp_path / "r.ndjson"
    p.write_text('{"a": 1}\n{"a": 2}\n{"a"')
    assert read_records(p) == [{"a": 1}, {"a": 2}]


def test_canonical_order_is_order_free(small_records):
    shuffled = list(small_records)
    np.random.default_rng(0).shuffle(shuffled)
    assert canonical_order(shuffled) == small_records


# ---------------------------------------------------------------- curves

def test_rates_monotone_in_alpha(small_records):
    curves = aggregate_curves(small_records, ("hypothesis",))
    for (_, _), g in curves.frame.groupby(["method", "hypothesis"]):
        assert np.all(np.diff(g.sort_values("alpha")["rate"].to_numpy()) >= 0)
        assert g["rate"].iloc[-1] == 1.0  # every p is <= 1


def test_single_record_gives_step(small_records):
    rec = small_records[0]
    curves = aggregate_curves([rec], ())
    f = curves.frame[curves.frame["method"] == "iv_raw"]
    expected = (np.asarray(DEFAULT_ALPHAS) >= rec["p_iv_raw"]).astype(float)
    assert np.array_equal(f["rate"].to_numpy(), expected)


def test_empty_stratum_is_flagged(small_records):
    null = [r for r in small_records if r["hypothesis"] == "null"]
    curves = aggregate_curves(null, ("beta_bin",))
    f = curves.frame
    empty = f[f["beta_bin"] == "[3,4]"]
    assert empty["empty"].all() and (empty["count"] == 0).all() and empty["rate"].isna().all()
    assert not f[f["beta_bin"] == "[0,1)"]["empty"].any()
    with pytest.raises(InvalidArgumentError):
        aggregate_curves([], ())


def test_failed_records_are_excluded(small_records):
    recs = [dict(r) for r in small_records]
    recs[0] = {**recs[0], "failed": True}
    curves = aggregate_curves(recs, ())
    assert curves.n_failed == 1
    assert curves.frame["count"].iloc[0] == len(recs) - 1


def test_aggregation_ignores_concatenation_order(small_records):
    a, b = small_records[:17], small_records[17:]
    whole = aggregate_curves(small_records, ("hypothesis", "n_bin")).to_csv()
    assert aggregate_curves(b + a, ("hypothesis", "n_bin")).to_csv() == whole


def test_rate_lookup(small_records):
    curves = aggregate_curves(small_records, ("hypothesis",))
    f = records_frame(small_records)
    alt = f[f["hypothesis"] == "alt"]
    assert curves.rate("iv_adj", 0.5, hypothesis="alt") == pytest.approx((alt["p_iv_adj"] <= 0.5).mean())


# ---------------------------------------------------------------- bias

def test_bias_table_shape(small_records):
    tab = bias_table(small_records)
    assert set(tab["method"]) == {"iv_raw", "iv_adj", "itt_raw", "itt_adj", "naive_raw", "naive_adj"}
    assert set(tab["compliance"]) == {"all", "significant", "nonsignificant"}
    row = tab[(tab.method == "iv_raw") & (tab.hypothesis == "null") & (tab.compliance == "all")].iloc[0]
    f = records_frame(small_records)
    expected = -f[f.hypothesis == "null"]["beta_iv_raw"].dropna()
    assert row["median"] == pytest.approx(expected.median())
    assert row["count"] == len(expected)


def test_perfect_compliance_bias_identical(small_records):
    f = records_frame(small_records)
    f["beta_itt_raw"] = f["beta_iv_raw"]
    tab = bias_table(f)
    iv = tab[tab.method == "iv_raw"].drop(columns="method").reset_index(drop=True)
    itt = tab[tab.method == "itt_raw"].drop(columns="method").reset_index(drop=True)
    pd.testing.assert_frame_equal(iv, itt)


# ---------------------------------------------------------------- trend test

def test_cochran_armitage_matches_regression_oracle():
    r = np.array([5, 9, 14, 20])
    n = np.array([50, 50, 50, 50])
    res = cochran_armitage(r, n)
    # oracle: score test of the slope in a linear probability model,
    # computed from the expanded 0/1 data
    s = np.repeat(np.arange(4.0), n)
    y = np.concatenate([np.r_[np.ones(k), np.zeros(m - k)] for k, m in zip(r, n)])
    N = len(y)
    num = np.sum((s - s.mean()) * (y - y.mean()))
    den = math.sqrt(y.mean() * (1 - y.mean()) * np.sum((s - s.mean()) ** 2))
    assert res["z"] == pytest.approx(num / den, rel=1e-12)
    assert res["p_increasing"] == pytest.approx(stats.norm.sf(num / den))
    assert N == 200
    flat = cochran_armitage([10, 10], [50, 50])
    assert flat["z"] == 0.0


def test_cochran_armitage_needs_two_groups():
    with pytest.raises(InvalidArgumentError):
        cochran_armitage([3, 0], [10, 0])


def test_stress_requires_flag():
    with pytest.raises(ConfigError):
        nonstationarity_stress(SMALL)


def test_stress_runs_stationary_twin():
    cfg = ExperimentConfig(models=("ARMA10",), settings=(5, 7), n_datasets=3, n_perm=100, seed=3, n_sweeps=2,
                           allow_nonstationary=True)
    res = nonstationarity_stress(cfg)
    assert len(res["unit_root"]) == 6 and all(r["unit_root"] for r in res["unit_root"])
    assert all(r["params"]["phi1"] == 1.0 for r in res["unit_root"])
    ctl = res["control"]
    assert len(ctl) == 3 and all(r["setting"] == 5 for r in ctl)
    # the twin shares seeds and every other design value
    twin = {r["replicate"]: r for r in res["unit_root"] if r["setting"] == 5}
    for r in ctl:
        u = twin[r["replicate"]]
        assert r["data_seed"] == u["data_seed"]
        assert {k: v for k, v in r["params"].items() if k != "phi1"} == {
            k: v for k, v in u["params"].items() if k != "phi1"
        }


def test_cochran_armitage_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.stats.contingency_tables")
    r = np.array([3, 8, 6, 15, 2])
    n = np.array([40, 55, 30, 60, 10])
    ref = sm.Table(np.column_stack([n - r, r])).test_ordinal_association(
        row_scores=np.arange(5.0), col_scores=np.array([0.0, 1.0])
    )
    # the linear-by-linear statistic uses an N - 1 variance denominator
    N = n.sum()
    assert cochran_armitage(r, n)["z"] * math.sqrt((N - 1) / N) == pytest.approx(ref.zscore, rel=1e-12)
