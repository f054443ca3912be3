import csv
import json

import numpy as np
import pytest

from gtlsynth import cli
from gtlsynth.central import SynthesisError
from gtlsynth.modelio import save_model
from oracles import random_single_agent


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys is not None else ""
    return code, out


@pytest.fixture
def toy(tmp_path):
    path = tmp_path / "toy.json"
    save_model(random_single_agent(5, 6, 2, spec="F[<=3] g", lam=0.9), path)
    return path


@pytest.fixture
def crop4(tmp_path):
    path = tmp_path / "crop4.json"
    assert cli.main(["bench", "crop", "--rows", "2", "--cols", "2", "--out", str(path)]) == 0
    return path


def test_synth_central_report(tmp_path, toy, capsys):
    report = tmp_path / "r.json"
    code, out = run(["synth", "central", "--model", toy, "--lambda", "0.9", "--report", report], capsys)
    assert code == cli.EXIT_OK
    doc = json.loads(report.read_text())
    assert doc["command"] == "synth central"
    assert doc["satisfaction"]["1"] >= 0.9 - 1e-6
    assert all(0.0 <= v <= 1.0 + 1e-9 for v in doc["satisfaction"].values())
    assert doc["config"]["lam"] == "0.9" and doc["config"]["discount"] == 0.97
    assert "objective" in json.loads(out)


def test_missing_model_file(tmp_path, capsys):
    code = cli.main(["synth", "central", "--model", str(tmp_path / "absent.json")])
    assert code == cli.EXIT_MODEL
    assert "cannot read" in capsys.readouterr().err


def test_bad_formula_is_model_error(capsys):
    assert cli.main(["gtl", "check", "--formula", "p &"]) == cli.EXIT_MODEL


def test_infeasible_exit_code(tmp_path, capsys):
    path = tmp_path / "m.json"
    save_model(random_single_agent(1, 4, 2, spec="F[<=0] g", lam=1.0), path)
    code = cli.main(["synth", "central", "--model", str(path)])
    assert code == cli.EXIT_INFEASIBLE
    assert "unsatisfiable" in capsys.readouterr().err


def test_solver_failure_exit_code(toy, monkeypatch, capsys):
    def broken(*a, **k):
        raise SynthesisError("interior point method stalled")

    monkeypatch.setattr(cli, "synthesize_central", broken)
    assert cli.main(["synth", "central", "--model", str(toy)]) == cli.EXIT_SOLVER


def test_lambda_for_unknown_agent(toy):
    assert cli.main(["synth", "central", "--model", str(toy), "--lambda", "3=0.5"]) == cli.EXIT_MODEL


def test_strict_deviations_refuse_discounting(toy, capsys):
    code = cli.main(["synth", "central", "--model", str(toy), "--deviations", "strict"])
    assert code == cli.EXIT_MODEL
    assert "deviations" in capsys.readouterr().err


def test_config_file_supplies_and_flags_override(tmp_path, toy, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": "0.5", "discount": 0.9}))
    report = tmp_path / "r.json"
    argv = ["--config", cfg, "synth", "central", "--model", toy, "--discount", "0.95", "--report", report]
    assert run(argv, capsys)[0] == 0
    conf = json.loads(report.read_text())["config"]
    assert conf["lam"] == "0.5" and conf["discount"] == 0.95


def test_unknown_config_key(tmp_path, toy):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["--config", str(cfg), "synth", "central", "--model", str(toy)]) == cli.EXIT_MODEL


@pytest.mark.slow
def test_admm_residual_csv(tmp_path, crop4, capsys):
    res = tmp_path / "res.csv"
    argv = ["synth", "admm", "--model", crop4, "--beta", "1", "--iters", "500", "--gamma", "1e-3", "--residuals-out", res]
    assert run(argv, capsys)[0] == 0
    with open(res, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iteration", "res_p", "res_d", "wall_ms"]
    assert [int(r["iteration"]) for r in rows] == list(range(1, len(rows) + 1))
    assert float(rows[-1]["res_p"]) < 1e-3


def synth_policy(tmp_path, model, capsys):
    pol = tmp_path / "pol.json"
    assert run(["synth", "central", "--model", model, "--policy-out", pol], capsys)[0] == 0
    return pol


def test_simulate_is_deterministic(tmp_path, toy, capsys):
    pol = synth_policy(tmp_path, toy, capsys)
    outs = []
    for k in range(2):
        out = tmp_path / f"traj{k}.json"
        run(["simulate", "--model", toy, "--policy", pol, "--horizon", "8", "--samples", "50", "--seed", "3", "--out", out], capsys)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_simulate_horizon_zero(tmp_path, toy, capsys):
    pol = synth_policy(tmp_path, toy, capsys)
    out = tmp_path / "t.json"
    code, text = run(["simulate", "--model", toy, "--policy", pol, "--horizon", "0", "--samples", "5", "--out", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert all(len(run_) == 1 for run_ in doc["states"])
    counts = json.loads(text)["1"]["counts"]
    # the start state carries no g, so a one-state run cannot decide F[<=3] g
    assert counts["undetermined"] == 5


def test_simulated_frequency_matches_exact(tmp_path, toy, capsys):
    pol = synth_policy(tmp_path, toy, capsys)
    argv = ["simulate", "--model", toy, "--policy", pol, "--horizon", "10", "--samples", "10000",
            "--kill-discount", "0.97", "--exact", "--seed", "1"]
    code, text = run(argv, capsys)
    assert code == 0
    s = json.loads(text)["1"]
    se = np.sqrt(s["exact_local"] * (1 - s["exact_local"]) / 10000)
    assert s["exact_local"] >= 0.9 - 1e-6
    assert abs(s["frequency"] - s["exact_local"]) <= 3 * se


def test_simulate_scope_mismatch(tmp_path, toy, crop4, capsys):
    pol = synth_policy(tmp_path, toy, capsys)
    assert cli.main(["simulate", "--model", str(crop4), "--policy", str(pol)]) == cli.EXIT_MODEL


def test_gtl_check_classifies(crop4, capsys):
    code, out = run(["gtl", "check", "--formula", "G F[<=3] d", "--model", crop4, "--node", "1"], capsys)
    assert code == 0
    frag = json.loads(out)["fragments"]["1"]
    assert frag["fragment"] == "safe"


def test_product_dump(tmp_path, crop4, capsys):
    out = tmp_path / "p.json"
    assert run(["product", "dump", "--model", crop4, "--out", out], capsys)[0] == 0
    assert set(json.loads(out.read_text())["agents"]) == {"1", "2", "3", "4"}


def test_bench_urban_reduced(tmp_path, capsys):
    out = tmp_path / "u.json"
    code, text = run(["bench", "urban", "--reduced", "--out", out], capsys)
    assert code == 0 and json.loads(text)["officers"] == 2


def test_scaling_single_rep(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(["scaling", "--sizes", "4", "--reps", "1", "--iters", "2", "--out", out], capsys)[0] == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"admm", "central"}
    assert all(float(r["per_iter_ms_std"]) == 0.0 for r in rows)
