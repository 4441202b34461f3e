import csv
import json

import numpy as np
import pytest

from sebm.cli import main
from sebm.harness import (RunConfig, cmd_infer, cmd_mle_study, cmd_report, cmd_simulate, mle_replicate,
                          replicate_seed)


def _small(**kw):
    base = dict(N=20, L=4, M=3, replicates=1, mle_length=300, mle_lengths=[100, 300], seed=11)
    base.update(kw)
    return RunConfig(**base)


def test_config_validation(tmp_path):
    assert RunConfig().L == 10_000 and RunConfig().M == 5 and RunConfig().N == 100
    (tmp_path / "c.json").write_text(json.dumps({"L": 7, "prior": "uniform"}))
    cfg = RunConfig.from_json(tmp_path / "c.json", M=2, seed=None)
    assert (cfg.L, cfg.M, cfg.prior, cfg.seed) == (7, 2, "uniform", 0)
    (tmp_path / "bad.json").write_text(json.dumps({"Lx": 7}))
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_json(tmp_path / "bad.json")
    for bad in (dict(prior="flat"), dict(obs_preset="5"), dict(L=0), dict(theta_source="explicit")):
        with pytest.raises(ValueError):
            RunConfig(**bad)
    assert RunConfig(obs_preset="2").model_config().observed_nodes == (0, 6)


def test_replicate_seeds_distinct():
    a = np.random.default_rng(replicate_seed(1, 0)).random()
    b = np.random.default_rng(replicate_seed(1, 1)).random()
    c = np.random.default_rng(replicate_seed(1, 0)).random()
    assert a != b and a == c


def test_simulate_outputs(tmp_path):
    cfg = _small(N=100)
    paths = cmd_simulate(cfg, tmp_path / "a")
    cmd_simulate(cfg, tmp_path / "b")
    for key in ("trajectory", "observations", "climatology"):
        assert paths[key].read_bytes() == (tmp_path / "b" / paths[key].name).read_bytes()
    states = np.loadtxt(paths["trajectory"], delimiter=",", skiprows=1)
    assert states.shape == (100, 13)
    hist = np.loadtxt(paths["climatology"], delimiter=",", skiprows=1)
    mass = hist[:, 2] * (hist[:, 1] - hist[:, 0])
    assert mass.sum() == pytest.approx(1.0)
    inside = (hist[:, 0] >= 0.9) & (hist[:, 1] <= 1.1)
    assert mass[inside].sum() > 0.9
    man = json.loads(paths["manifest"].read_text())
    assert man["command"] == "simulate" and len(man["theta_true"]) == 3
    # the manifest is enough to re-run
    again = RunConfig(**man["config"])
    cmd_simulate(again, tmp_path / "c")
    assert (tmp_path / "c" / "trajectory.csv").read_bytes() == paths["trajectory"].read_bytes()


def test_mle_noiseless_observation_matches_truth():
    rows = mle_replicate(_small(sigma_eps=0.0), 0)
    true = [r for r in rows if r["kind"] == "true"]
    noisy = [r for r in rows if r["kind"] == "noisy"]
    for a, b in zip(true, noisy):
        assert {k: v for k, v in a.items() if k != "kind"} == {k: v for k, v in b.items() if k != "kind"}


def test_mle_study_files_and_worker_invariance(tmp_path):
    cfg = _small(replicates=3)
    one = cmd_mle_study(cfg, tmp_path / "w1")
    two = cmd_mle_study(RunConfig(**{**cfg.to_dict(), "workers": 2}), tmp_path / "w2")
    assert one["rows"].read_bytes() == two["rows"].read_bytes()
    with open(one["summary"]) as fh:
        summary = list(csv.DictReader(fh))
    assert {(r["kind"], r["N"]) for r in summary} == {("true", "100"), ("true", "300"),
                                                     ("noisy", "100"), ("noisy", "300")}
    with pytest.raises(ValueError):
        cmd_mle_study(_small(replicates=1), tmp_path / "x")


def test_infer_smoke_single_iteration(tmp_path):
    mans = cmd_infer(_small(L=1), tmp_path / "run")
    run = tmp_path / "run"
    for name in ("chain/theta_samples.csv", "chain/states.csv", "chain/flags.csv", "chain/chain.json",
                 "report.json", "update_rate.csv", "acf.csv", "theta_hist.csv", "observations.csv",
                 "trajectory.csv", "ensembles.csv", "manifest.json"):
        assert (run / name).exists(), name
    assert mans[0]["metrics"]["coverage_probability"] is not None


def test_infer_from_files(tmp_path):
    sim = cmd_simulate(_small(), tmp_path / "sim")
    mans = cmd_infer(_small(L=3), tmp_path / "inf", obs_path=sim["observations"], truth_path=sim["trajectory"])
    assert mans[0]["metrics"]["state_rel_error_traj"] < 10


def test_report_grouping_and_single_run(tmp_path):
    cmd_infer(_small(L=6, replicates=2), tmp_path / "g")
    cmd_infer(_small(L=6, prior="uniform"), tmp_path / "u")
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "manifest.json").write_text("{not json")
    with pytest.warns(UserWarning, match="skipping"):
        res = cmd_report([tmp_path / "g", tmp_path / "u", tmp_path / "broken"], tmp_path / "rep")
    groups = {(r["prior"], r["runs"]) for r in res["states"]}
    assert groups == {("gaussian", 2), ("uniform", 1)}
    single = cmd_report([tmp_path / "u"], tmp_path / "rep1")
    man = json.loads((tmp_path / "u" / "manifest.json").read_text())["metrics"]
    row = single["states"][0]
    assert row["traj_err_mean"] == pytest.approx(man["state_rel_error_traj"])
    assert row["cp_mean"] == pytest.approx(man["coverage_probability"])
    err = single["parameters"][0]
    assert err["theta0_err_mean"] == pytest.approx(man["theta_mean_error"][0])
    assert man["box_violations"] == 0
    with pytest.raises(ValueError), pytest.warns(UserWarning):
        cmd_report([tmp_path / "broken"], tmp_path / "rep2")


def test_cli(tmp_path, capsys):
    assert main(["simulate", "--N", "10", "--seed", "3", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "observations.csv").exists()
    assert main(["infer", "--N", "10", "--L", "2", "--M", "2", "--replicates", "1",
                 "--out", str(tmp_path / "i")]) == 0
    assert main(["report", str(tmp_path / "i"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "state_errors.csv").exists()
    capsys.readouterr()
    assert main(["infer", "--obs", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "j")]) == 1
    assert "error" in capsys.readouterr().err
