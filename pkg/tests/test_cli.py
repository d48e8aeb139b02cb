import hashlib
import json
import subprocess
import sys

import pytest

from throttle_lift.cli import main
from throttle_lift.sim import CampaignConfig


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.json").write_text(json.dumps(CampaignConfig().to_dict()))
    assert main(["simulate", "--config", str(d / "c.json"), "--seed", "7", "--out", str(d / "run")]) == 0
    return d


def test_simulate_writes_three_csvs(workdir):
    assert sorted(p.name for p in (workdir / "run").iterdir()) == ["potentials.csv", "records.csv", "trace.csv"]


def test_simulate_zero_config(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 0


def test_estimate_output(workdir, capsys):
    out = workdir / "est.csv"
    assert main(["estimate", "--records", str(workdir / "run" / "records.csv"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,estimate,n,p,n_p,itt_y,itt_d,n_co_hat,tau_p,w_p"
    assert [line.split(",")[0] for line in lines[1:4]] == ["late", "ols", "iv"]
    assert "late: estimate=" in capsys.readouterr().out


@pytest.mark.parametrize("argv,code", [
    (["estimate", "--records", "missing.csv"], 3),
    (["estimate"], 2),
    (["nope"], 2),
    (["estimate", "--records", "x.csv", "--bin-width", "-1"], 2),
    (["bootstrap", "--records", "x.csv", "--alpha", "2"], 2),
])
def test_exit_codes(argv, code):
    assert main(argv) == code


def test_bad_records_is_data_error(tmp_path):
    bad = tmp_path / "r.csv"
    bad.write_text("unit_id,interval,p,Z,D,Y,E,competitor_bid\n0,0,0.5,0,1,0,0,1\n")
    assert main(["estimate", "--records", str(bad)]) == 3


def test_no_compliers_is_degeneracy(tmp_path):
    rec = tmp_path / "r.csv"
    rec.write_text("unit_id,interval,p,Z,D,Y,E,competitor_bid\n"
                   "0,0,0.5,1,0,1,0,1\n1,0,0.5,0,0,0,0,1\n2,0,0.5,1,0,0,0,1\n")
    assert main(["estimate", "--records", str(rec), "--method", "late"]) == 4


def test_failed_estimate_leaves_no_output(tmp_path):
    rec = tmp_path / "r.csv"
    rec.write_text("unit_id,interval,p,Z,D,Y,E,competitor_bid\n0,0,0.5,1,0,1,0,1\n1,0,0.5,0,0,0,0,1\n")
    out = tmp_path / "out.csv"
    assert main(["estimate", "--records", str(rec), "--out", str(out)]) == 4
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [rec]


@pytest.mark.parametrize("sub,extra", [
    ("estimate", ["--method", "all"]),
    ("variance", []),
    ("bootstrap", ["--B", "20", "--seed", "3"]),
    ("bootstrap", ["--B", "20", "--seed", "3", "--policy", "constant"]),
])
def test_subcommands_deterministic(workdir, sub, extra):
    records = str(workdir / "run" / "records.csv")
    outs = [workdir / f"{sub}-{k}.csv" for k in (1, 2)]
    for out in outs:
        assert main([sub, "--records", records, "--out", str(out), "--threads", "1"] + extra) == 0
    assert digest(outs[0]) == digest(outs[1])


def test_simulate_deterministic(workdir, tmp_path):
    assert main(["simulate", "--config", str(workdir / "c.json"), "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("records.csv", "potentials.csv", "trace.csv"):
        assert digest(tmp_path / name) == digest(workdir / "run" / name)


def test_montecarlo_deterministic(workdir, capsys):
    dirs = [workdir / f"mc{k}" for k in (1, 2)]
    for d in dirs:
        assert main(["montecarlo", "--config", str(workdir / "c.json"), "--R", "10", "--seed", "1",
                     "--out-dir", str(d)]) == 0
    for name in ("table1.csv", "table2.csv", "replicates.csv"):
        assert digest(dirs[0] / name) == digest(dirs[1] / name)
    assert "Stratified LATE" in capsys.readouterr().out


def test_ingest_then_weighted_estimate(tmp_path):
    from throttle_lift.dataio import write_log
    from throttle_lift.sim import run_campaign

    write_log(run_campaign(CampaignConfig(seed=3)), tmp_path / "log.csv")
    out = tmp_path / "ingested.csv"
    for k in (1, 2):
        assert main(["ingest", "--log", str(tmp_path / "log.csv"), "--emit-records", str(out)]) == 0
        if k == 1:
            first = digest(out)
    assert digest(out) == first
    assert out.read_text().splitlines()[0].endswith(",weight")
    assert main(["estimate", "--records", str(out), "--weighted", "--method", "late"]) == 0


def test_threads_env(monkeypatch, workdir):
    monkeypatch.setenv("THROTTLE_LIFT_THREADS", "1")
    records = str(workdir / "run" / "records.csv")
    assert main(["bootstrap", "--records", records, "--B", "10"]) == 0


def test_module_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "throttle_lift", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("throttle-lift ")
