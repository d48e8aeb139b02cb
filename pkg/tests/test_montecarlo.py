import numpy as np
import pytest

from throttle_lift.montecarlo import emit_report, parse_report_csv, run_replications, write_report
from throttle_lift.sim import CampaignConfig


@pytest.fixture(scope="module")
def small_report():
    return run_replications(CampaignConfig(), R=6, master_seed=4)


def test_single_replicate():
    rep = run_replications(CampaignConfig(), R=1, master_seed=2)
    assert len(rep.per_replicate) == 1
    row = rep.per_replicate[0]
    assert rep.summary["tau_hat"].bias == row.tau_hat - row.true_late
    text = emit_report(rep, "csv")
    assert "bootstrap" not in text.split("table2", 1)[1]
    assert [r["label"] for r in parse_report_csv(text)["table1"]] == ["true_late", "tau_hat", "ols", "iv"]


def test_null_effect():
    cfg = CampaignConfig(h_lift=0.0, l_lift=0.0)
    rep = run_replications(cfg, R=8, master_seed=3)
    assert all(r.true_late == 0.0 for r in rep.per_replicate)
    taus = np.array([r.tau_hat for r in rep.per_replicate])
    se = np.mean([r.se_analytic for r in rep.per_replicate])
    assert abs(taus.mean()) <= 4 * se / np.sqrt(len(taus))


def test_csv_row_count_and_roundtrip(small_report):
    text = emit_report(small_report, "csv")
    parsed = parse_report_csv(text)
    assert len(parsed["replicate"]) == 6
    for row in parsed["table1"]:
        s = small_report.summary[row["label"]]
        assert (row["mean"], row["bias"], row["rmse"], row["n"]) == (s.mean, s.bias, s.rmse, s.n)
    (cov,) = [r for r in parsed["table2"] if r["label"] == "analytic"]
    assert cov["coverage"] == small_report.coverage["analytic"]
    for row, r in zip(parsed["replicate"], small_report.per_replicate):
        assert row["tau_hat"] == r.tau_hat


def test_same_seed_same_report(small_report):
    again = run_replications(CampaignConfig(), R=6, master_seed=4)
    assert emit_report(again, "csv") == emit_report(small_report, "csv")
    assert emit_report(again, "markdown") == emit_report(small_report, "markdown")
    other = run_replications(CampaignConfig(), R=6, master_seed=5)
    assert emit_report(other, "csv") != emit_report(small_report, "csv")


def test_parallel_matches_serial():
    a = run_replications(CampaignConfig(), R=3, master_seed=9, n_jobs=1)
    b = run_replications(CampaignConfig(), R=3, master_seed=9, n_jobs=2)
    assert emit_report(a) == emit_report(b)


def test_bootstrap_columns():
    rep = run_replications(CampaignConfig(), R=2, master_seed=1, with_bootstrap=True, B=20)
    assert set(rep.coverage) == {"analytic", "bootstrap", "plain"}
    assert all(np.isfinite(r.se_bootstrap) for r in rep.per_replicate)
    md = emit_report(rep, "markdown")
    assert "| Method | Mean | Bias | RMSE |" in md and "Bootstrap" in md


def test_write_report(tmp_path, small_report):
    write_report(small_report, tmp_path)
    assert (tmp_path / "table1.csv").read_text().startswith("method,mean,bias,rmse,n\n")
    assert (tmp_path / "table2.csv").read_text().startswith("estimator,se,coverage,n\n")
    assert len((tmp_path / "replicates.csv").read_text().splitlines()) == 7


def test_unknown_format(small_report):
    with pytest.raises(ValueError):
        emit_report(small_report, "xml")
