import json
import os

import numpy as np
import pytest

from crvae.cli import main, window_set
from crvae.datagen import load_adjacency, load_csv, save_adjacency, save_csv
from crvae.numcore import Rng

TINY = {"tau": 2, "hidden": 4, "layers": 1, "batch_size": 8, "epochs_phase1": 2,
        "epochs_phase2": 1, "lam": 0.01, "gamma": 0.1, "lr": 0.1}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def henon_dir(tmp_path):
    out = tmp_path / "henon"
    assert run("simulate", "henon", "--T", 120, "--out", out) == 0
    return out


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


# -- usage errors -----------------------------------------------------------------------


def test_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run("simulate", "henon")
    assert err.value.code == 2
    assert "--out" in capsys.readouterr().err


def test_generate_count_zero_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        run("generate", "--checkpoint", tmp_path / "x", "--count", 0, "--out", tmp_path)
    assert err.value.code == 2


def test_config_errors_listed_together(tmp_path, henon_dir, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tau": 0, "lr": -1, "bogus": 3}))
    code = run("train", "--data", henon_dir / "data.csv", "--config", bad, "--out", tmp_path / "o")
    assert code == 2
    err = capsys.readouterr().err
    assert err.count("config error") == 3
    assert "tau" in err and "lr" in err and "bogus" in err


def test_missing_inputs_are_errors(tmp_path, capsys):
    assert run("generate", "--checkpoint", tmp_path / "none.crvae", "--out", tmp_path) == 1
    scores = tmp_path / "s.csv"
    save_csv(scores, np.eye(2))
    assert run("eval", "causal", "--scores", scores, "--out", tmp_path / "e") == 1
    err = capsys.readouterr()
    assert "error" in err.err and err.out == ""


# -- simulate -------------------------------------------------------------------------------


def test_simulate_henon_defaults(tmp_path):
    out = tmp_path / "h"
    assert run("simulate", "henon", "--out", out) == 0
    assert load_csv(out / "data.csv").observations.shape == (2048, 6)
    assert load_adjacency(out / "truth.csv").sum() == 11
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 0
    assert set(manifest["outputs"]) == {"data.csv", "truth.csv"}
    assert "timestamp" not in json.dumps(manifest)


def test_simulate_lorenz_defaults(tmp_path):
    out = tmp_path / "l"
    assert run("simulate", "lorenz96", "--out", out) == 0
    assert load_csv(out / "data.csv").observations.shape == (2048, 10)
    assert load_adjacency(out / "truth.csv").sum() == 40


def test_simulate_is_replayable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("simulate", "var", "--m", 3, "--T", 200, "--seed", 4, "--out", a)
    run("simulate", "var", "--m", 3, "--T", 200, "--seed", 4, "--out", b)
    for name in ("data.csv", "truth.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# -- train and generate -----------------------------------------------------------------------


def test_train_generate_round(tmp_path, henon_dir, config, capsys):
    out = tmp_path / "model"
    code = run("train", "--data", henon_dir / "data.csv", "--truth", henon_dir / "truth.csv",
               "--config", config, "--out", out)
    assert code == 0
    for name in ("model.crvae", "causal_matrix.csv", "loss_history.csv", "report.txt",
                 "summary.json", "manifest.json"):
        assert (out / name).exists()
    assert load_csv(out / "causal_matrix.csv").observations.shape == (6, 6)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["tau"] == 2 and manifest["config"]["batch_size"] == 8

    gen = tmp_path / "gen"
    assert run("generate", "--checkpoint", out / "model.crvae", "--length", 20, "--count", 10,
               "--seed", 3, "--out", gen) == 0
    files = sorted(f for f in os.listdir(gen) if f.startswith("synthetic_"))
    assert len(files) == 10
    assert all(load_csv(gen / f).observations.shape == (20, 6) for f in files)
    again = tmp_path / "gen2"
    run("generate", "--checkpoint", out / "model.crvae", "--length", 20, "--count", 10,
        "--seed", 3, "--out", again)
    assert all((gen / f).read_bytes() == (again / f).read_bytes() for f in files)
    capsys.readouterr()


def test_train_replay_is_byte_identical(tmp_path, henon_dir, config):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        run("train", "--data", henon_dir / "data.csv", "--config", config, "--out", o)
    for name in ("model.crvae", "causal_matrix.csv", "loss_history.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_no_compensation_keeps_causal_matrix(tmp_path, henon_dir, config):
    run("train", "--data", henon_dir / "data.csv", "--config", config, "--out", tmp_path / "on")
    run("train", "--data", henon_dir / "data.csv", "--config", config, "--no-compensation",
        "--out", tmp_path / "off")
    assert ((tmp_path / "on" / "causal_matrix.csv").read_bytes()
            == (tmp_path / "off" / "causal_matrix.csv").read_bytes())


def test_default_config_echo(tmp_path, henon_dir):
    from crvae.cli import resolve_config
    cfg = resolve_config(None, {"seed": None})
    assert cfg.tau == 10 and cfg.batch_size == 256


# -- eval ----------------------------------------------------------------------------------------


def test_eval_causal_perfect(tmp_path, capsys):
    truth = np.eye(3, dtype=int)
    save_csv(tmp_path / "s.csv", truth * 2.0)
    save_adjacency(tmp_path / "t.csv", truth)
    assert run("eval", "causal", "--scores", tmp_path / "s.csv", "--truth", tmp_path / "t.csv",
               "--out", tmp_path / "e") == 0
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summary[0]["metric"] == "auroc" and summary[0]["value"] == 1.0
    assert capsys.readouterr().out.startswith("auroc\t1\t")


def test_eval_mmd_identical_files(tmp_path, henon_dir):
    real = henon_dir / "data.csv"
    assert run("eval", "mmd", "--real", real, "--synth", real, "--out", tmp_path / "m") == 0
    summary = json.loads((tmp_path / "m" / "summary.json").read_text())
    assert summary[0]["value"] == 0.0


def test_eval_te_writes_scores(tmp_path, henon_dir):
    assert run("eval", "te", "--data", henon_dir / "data.csv", "--truth", henon_dir / "truth.csv",
               "--sigma", 0.5, "--out", tmp_path / "te") == 0
    scores = load_csv(tmp_path / "te" / "te_scores.csv").observations
    assert scores.shape == (6, 6) and np.all(np.diag(scores) == 0)


def test_eval_tstr_runs(tmp_path, henon_dir):
    synth = tmp_path / "syn.csv"
    save_csv(synth, Rng(0).uniform((40, 6)))
    assert run("eval", "tstr", "--real", henon_dir / "data.csv", "--synth", synth,
               "--max-epochs", 2, "--trtr", "--out", tmp_path / "t") == 0
    names = [r["metric"] for r in json.loads((tmp_path / "t" / "summary.json").read_text())]
    assert names == ["tstr_rmse", "trtr_rmse"]


def test_window_set_stacks_exact_windows():
    a = [np.ones((20, 2)), np.zeros((20, 2))]
    np.testing.assert_array_equal(window_set(a, 20, 5, Rng(0)), np.stack(a))
    w = window_set([np.arange(100.0)[:, None]], 20, 4, Rng(0))
    assert w.shape == (4, 20, 1)
