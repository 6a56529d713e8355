import numpy as np
import pytest

from saeboot.harness import (
    PATTERNS,
    ScenarioConfig,
    canonical_method,
    compare_reports,
    run_scenario,
)


def _small_config(**kw):
    base = dict(
        m=10,
        pattern=(2.0, 1.0, 0.8, 0.5, 0.3),
        A=1.0,
        family="normal",
        phi=None,
        n_sims=24,
        B1=50,
        B2=20,
        alphas=(0.80, 0.95),
        methods=("Direct", "TradFH", "SB_FH", "HM_PR", "DB_PR"),
        seed=101,
        workers=1,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def test_method_normalization():
    assert canonical_method("sb.fh") == "SB_FH"
    assert canonical_method("DIRECT") == "Direct"
    assert canonical_method("db_pr") == "DB_PR"
    with pytest.raises(ValueError):
        canonical_method("bogus")


def test_config_validation():
    with pytest.raises(ValueError):
        _small_config(m=12)  # not a multiple of 5
    with pytest.raises(ValueError):
        _small_config(pattern=(1.0, 2.0))  # needs 5 group values
    with pytest.raises(ValueError):
        _small_config(alphas=(100,))  # normalizes to 1.0, outside (0,1)
    with pytest.raises(ValueError):
        _small_config(methods=("SB_FH", "sb.fh"))  # duplicate after normalization
    cfg = _small_config(alphas=(80, 95))  # percent-style accepted
    assert cfg.alphas == (0.80, 0.95)


def test_pattern_helpers():
    cfg = ScenarioConfig(m=15, pattern="P1", methods=("Direct",), n_sims=1)
    assert cfg.group_variances() == PATTERNS["P1"]
    D = cfg.D()
    assert D.shape == (15,)
    assert list(D[:3]) == [4.0, 4.0, 4.0]
    assert cfg.pattern_name == "P1"
    assert _small_config().pattern_name == "custom"


def test_report_shape_and_rows():
    cfg = _small_config(n_sims=6)
    rep = run_scenario(cfg)
    n_cells = len(cfg.methods) * len(cfg.alphas)
    assert rep.coverage_pct.shape == (n_cells, 5)
    assert rep.avg_length.shape == (n_cells, 5)
    rows = rep.rows()
    assert len(rows) == n_cells * 5
    assert all(0.0 <= r["coverage_pct"] <= 100.0 for r in rows)
    assert all(r["avg_length"] > 0.0 for r in rows)
    # every estimator that ran reports a data-stage rate; DB adds stage 2
    assert rep.negative_rates["PR"]["boot2"] is not None
    assert rep.negative_rates["FH"]["boot1"] is not None


def test_run_scenario_deterministic():
    a = run_scenario(_small_config())
    b = run_scenario(_small_config())
    np.testing.assert_array_equal(a.coverage_pct, b.coverage_pct)
    np.testing.assert_array_equal(a.avg_length, b.avg_length)
    assert a.to_csv() == b.to_csv()


def test_worker_count_does_not_change_report(monkeypatch):
    monkeypatch.delenv("SAE_WORKERS", raising=False)
    serial = run_scenario(_small_config(workers=1))
    pooled = run_scenario(_small_config(workers=2))
    assert serial.to_csv() == pooled.to_csv()
    assert serial.negative_rates == pooled.negative_rates


def test_env_override_workers(monkeypatch):
    monkeypatch.setenv("SAE_WORKERS", "2")
    pooled = run_scenario(_small_config(workers=1))
    monkeypatch.delenv("SAE_WORKERS")
    serial = run_scenario(_small_config(workers=1))
    assert serial.to_csv() == pooled.to_csv()


def test_direct_interval_exact_coverage_quick():
    cfg = ScenarioConfig(
        m=25,
        pattern="P1",
        A=1.0,
        family="se",
        phi=None,
        n_sims=1500,
        alphas=(0.95,),
        methods=("Direct",),
        seed=91,
    )
    rep = run_scenario(cfg)
    assert np.all(np.abs(rep.coverage_pct - 95.0) < 2.5)


def test_sb_shorter_than_hm_for_low_variance_groups():
    # the synthetic interval's width tracks sqrt(A_hat) regardless of D_i, so
    # groups with small sampling variance pay for it relative to the EBL width
    cfg = ScenarioConfig(
        m=50,
        pattern="P1",
        A=1.0,
        family="t",
        phi=9.0,
        n_sims=40,
        B1=100,
        B2=20,
        alphas=(0.95,),
        methods=("SB_FH", "HM_FH"),
        seed=77,
    )
    rep = run_scenario(cfg)
    sb = rep.avg_length[cfg.cells().index(("SB_FH", 0.95))]
    hm = rep.avg_length[cfg.cells().index(("HM_FH", 0.95))]
    assert np.all(sb[1:] < hm[1:])  # groups G2..G5


def test_csv_round_trip_is_lossless(tmp_path):
    import csv

    rep = run_scenario(_small_config(n_sims=5))
    path = tmp_path / "report.csv"
    path.write_text(rep.to_csv())
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for got, want in zip(rows, rep.rows()):
        assert float(got["coverage_pct"]) == want["coverage_pct"]
        assert float(got["avg_length"]) == want["avg_length"]
        assert float(got["alpha"]) == want["alpha"]


def test_cell_lookup():
    rep = run_scenario(_small_config(n_sims=5))
    cov, ln = rep.cell("SB_FH", 95, 1)
    assert 0.0 <= cov <= 100.0 and ln > 0.0
    with pytest.raises(ValueError):
        rep.cell("SB_PR", 95, 1)  # method not in scenario


# ------------------------------------------------------------- comparisons


def _reference_from(report, path, perturb=0.0):
    import csv

    rows = report.rows()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "alpha", "group", "coverage_pct", "avg_length"])
        for r in rows:
            writer.writerow(
                [r["method"], r["alpha"], r["group"], r["coverage_pct"] + perturb, r["avg_length"]]
            )


def test_compare_reports_identical_passes(tmp_path):
    rep = run_scenario(_small_config(n_sims=5))
    ref = tmp_path / "ref.csv"
    _reference_from(rep, ref)
    result = compare_reports(rep, str(ref))
    assert result.passed
    assert len(result.cells) == len(rep.rows()) * 2  # coverage + length per cell


def test_compare_reports_flags_large_deviation(tmp_path):
    rep = run_scenario(_small_config(n_sims=5))
    ref = tmp_path / "ref.csv"
    _reference_from(rep, ref, perturb=10.0)
    result = compare_reports(rep, str(ref))
    assert not result.passed
    bad = result.failures()
    assert bad and all(c.metric == "coverage_pct" for c in bad)
    assert "FAIL" in str(result)


def test_compare_reports_missing_cell_raises(tmp_path):
    import csv

    rep = run_scenario(_small_config(n_sims=5))
    ref = tmp_path / "ref.csv"
    with open(ref, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "alpha", "group", "coverage_pct", "avg_length"])
        writer.writerow(["SB_PR", 95, "G1", 95.0, 1.0])  # estimator never ran
    with pytest.raises(ValueError):
        compare_reports(rep, str(ref))


def test_compare_negative_rate_reference(tmp_path):
    rep = run_scenario(_small_config(n_sims=8))
    ref = tmp_path / "neg.csv"
    fh_rate = rep.negative_rates["FH"]["data"]
    ref.write_text(
        "m,pattern,estimator,stage,pct\n"
        f"10,custom,FH,data,{fh_rate}\n"
        f"10,custom,PR,boot2,{rep.negative_rates['PR']['boot2']}\n"
    )
    result = compare_reports(rep, str(ref))
    assert result.passed
    ref.write_text("m,pattern,estimator,stage,pct\n10,custom,FH,data,99.0\n")
    assert not compare_reports(rep, str(ref)).passed


def test_compare_reports_schema_mismatch(tmp_path):
    rep = run_scenario(_small_config(n_sims=5))
    ref = tmp_path / "bad.csv"
    ref.write_text("foo,bar\n1,2\n")
    with pytest.raises(ValueError):
        compare_reports(rep, str(ref))
