import csv
import json

import pytest

from aoi_fbl.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, build_parser, main


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


@pytest.fixture(scope="module")
def qtable_s1(tmp_path_factory):
    path = tmp_path_factory.mktemp("q") / "s1.json"
    assert run("train", "--scenario", "scenario1", "--out", path) == EXIT_OK
    return path


def test_train(qtable_s1, tmp_path, capsys):
    doc = json.loads(qtable_s1.read_text())
    assert doc["converged"] and doc["sweeps_used"] <= 100
    assert run("train", "--scenario", "scenario1", "--l-max", 1, "--out", tmp_path / "q.json") == EXIT_NOT_CONVERGED
    assert "converged=false" in capsys.readouterr().out
    assert run("train", "--scenario", "scenario9", "--out", tmp_path / "q.json") == EXIT_USAGE


def test_simulate(tmp_path, capsys):
    out = tmp_path / "s4.csv"
    assert run("simulate", "--scenario", "scenario4", "--policy", "minper", "--trials", 100, "--out", out) == EXIT_OK
    row = next(csv.DictReader(open(out)))
    assert row["n1_at_A0"] == "250" and row["feasible"] == "true"
    assert float(row["delta_D_mean"]) == pytest.approx(0.0129, rel=0.05)
    first = out.read_bytes()
    assert run("simulate", "--scenario", "scenario4", "--policy", "minper", "--trials", 100, "--out", out) == EXIT_OK
    assert out.read_bytes() == first
    capsys.readouterr()
    args = ("simulate", "--scenario", "scenario1", "--policy", "uniform", "--trials", 20, "--out", tmp_path / "u.json")
    assert run(*args) == EXIT_OK
    captured = capsys.readouterr()
    assert "warning" in captured.err and "feasible=false" in captured.out
    assert json.loads((tmp_path / "u.json").read_text())[0]["feasible"] is False


def test_simulate_mdp(tmp_path, qtable_s1):
    assert run("simulate", "--scenario", "scenario1", "--policy", "mdp", "--out", tmp_path / "x.csv") == EXIT_USAGE
    args = ("simulate", "--policy", "mdp", "--qtable", qtable_s1, "--trials", 20, "--out", tmp_path / "m.csv")
    assert run("--verbose", *args, "--scenario", "scenario1") == EXIT_OK
    assert run(*args, "--scenario", "scenario2") == 1


def test_compare(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run("compare", "--scenario", "scenario4", "--out", out) == EXIT_OK
    for name in ("results.csv", "results.json", "scatter.csv", "policy_surface.csv", "qtable_scenario4.json"):
        assert (out / name).exists()
    rows = {r["policy"]: float(r["delta_D_mean"]) for r in csv.DictReader(open(out / "results.csv"))}
    assert set(rows) == {"uniform", "minper", "onestep", "mdp"}
    assert max(rows.values()) <= 1.1 * min(rows.values())
    first = (out / "results.csv").read_bytes()
    assert run("compare", "--scenario", "scenario4", "--out", out) == EXIT_OK  # cached table
    assert (out / "results.csv").read_bytes() == first


def test_export_policy(tmp_path, qtable_s1):
    out = tmp_path / "surface.csv"
    assert run("export-policy", "--qtable", qtable_s1, "--out", out) == EXIT_OK
    assert len(list(csv.DictReader(open(out)))) == 64
    assert run("export-policy", "--qtable", qtable_s1, "--scenario", "scenario2", "--out", out) == 1
    assert run("export-policy", "--qtable", qtable_s1, "--scenario", "scenario1", "--gamma", 0.8, "--out", out) == 1
    (tmp_path / "broken.json").write_text("{")
    assert run("export-policy", "--qtable", tmp_path / "broken.json", "--out", out) == 1


def test_config_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenarios": {"tiny": {
        "snr_db": [-8, -8], "payload_bits": 16, "n_max": 500, "eps_max": 0.1,
        "periods": 50, "trials": 10, "gamma": 0.9, "a_max": 8}}}))
    monkeypatch.setenv("AOI_FBL_CONFIG", str(cfg))
    assert run("simulate", "--scenario", "tiny", "--policy", "onestep", "--out", tmp_path / "t.csv") == EXIT_OK


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"train", "simulate", "compare", "reproduce", "export-policy"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
    train_help = " ".join(sub.choices["train"].format_help().split())
    for default in ("default: 0.9", "default: 8", "default: 100", "default: 1e-05"):
        assert default in train_help
