import json
import os
from pathlib import Path

import numpy as np
import pytest

from nsdg.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def tiny_data(tmp_path):
    base = tmp_path / "data" / "tiny"
    code = run_cli("generate", "circle", "--domains", "6", "--n", "120",
                   "--seed", "0", "--out", str(base))
    assert code == 0
    return base


def test_generate_writes_expected_rows(tmp_path):
    base = tmp_path / "c"
    assert run_cli("generate", "circle", "--seed", "0", "--out", str(base)) == 0
    rows = (tmp_path / "c.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 30000
    sidecar = json.loads((tmp_path / "c.json").read_text())
    assert sidecar["n_domains"] == 30


def test_generate_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("generate", "circle", "--domains", "4", "--n", "50", "--seed", "3",
            "--out", str(a))
    run_cli("generate", "circle", "--domains", "4", "--n", "50", "--seed", "3",
            "--out", str(b))
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()
    assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()


def test_generate_circle_hard_domain_count(tmp_path):
    base = tmp_path / "ch"
    assert run_cli("generate", "circle-hard", "--domains", "20", "--n", "40",
                   "--out", str(base)) == 0
    sidecar = json.loads((tmp_path / "ch.json").read_text())
    assert sidecar["n_domains"] == 20
    assert len(sidecar["mappings"]) == 19


def _train_args(tiny_data, tmp_path, method="airl", *extra):
    return ("train", method, "--data", str(tiny_data), "--t-source", "3",
            "--seed", "0", "--epochs", "2", "--batch", "16",
            "--repr-dim", "8", "--classifier-hidden", "6", "--lstm-hidden", "12",
            "--out-root", str(tmp_path / "runs"), *extra)


def test_train_creates_run_dir_with_artifacts(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path)) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    for name in ("config.json", "metrics.json", "model.ckpt", "model.json",
                 "train_log.jsonl"):
        assert (run_dir / name).exists(), name
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["method"] == "airl" and cfg["t_source"] == 3


def test_train_rerun_reproduces_metrics_bit_exactly(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path)) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    metrics_a = (run_dir / "metrics.json").read_bytes()
    ckpt_a = (run_dir / "model.ckpt").read_bytes()
    assert run_cli(*_train_args(tiny_data, tmp_path)) == 0
    run_dir2 = Path(capsys.readouterr().out.strip().splitlines()[-1])
    assert run_dir2 == run_dir  # same resolved config -> same hash
    assert (run_dir / "metrics.json").read_bytes() == metrics_a
    assert (run_dir / "model.ckpt").read_bytes() == ckpt_a


def test_train_config_replay_round_trips(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path)) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    replay = run_cli("train", "airl", "--config", str(run_dir / "config.json"),
                     "--out-root", str(tmp_path / "runs"))
    assert replay == 0
    run_dir2 = Path(capsys.readouterr().out.strip().splitlines()[-1])
    assert run_dir2 == run_dir


def test_unknown_config_keys_rejected(tiny_data, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": str(tiny_data), "bogus_key": 1}))
    code = run_cli("train", "airl", "--config", str(bad),
                   "--out-root", str(tmp_path / "runs"))
    assert code == 1
    assert "bogus_key" in capsys.readouterr().err


def test_ablation_no_inv_matches_alpha_zero(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path, "ablation:no_inv")) == 0
    dir_a = Path(capsys.readouterr().out.strip().splitlines()[-1])
    assert run_cli(*_train_args(tiny_data, tmp_path, "airl", "--alpha", "0")) == 0
    dir_b = Path(capsys.readouterr().out.strip().splitlines()[-1])
    assert (dir_a / "metrics.json").read_bytes() == (dir_b / "metrics.json").read_bytes()
    assert (dir_a / "model.ckpt").read_bytes() == (dir_b / "model.ckpt").read_bytes()


def test_softmax_attention_flag_reaches_config(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path, "airl",
                                "--softmax-attention")) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["model"]["attention_softmax"] is True


def test_train_missing_data_fails_cleanly(tmp_path, capsys):
    code = run_cli("train", "airl", "--data", str(tmp_path / "missing"),
                   "--out-root", str(tmp_path / "runs"))
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_failed_run_leaves_diagnostic(tiny_data, tmp_path):
    # t_source 1 is degenerate for the adaptive trainer
    code = run_cli("train", "airl", "--data", str(tiny_data), "--t-source", "1",
                   "--seed", "0", "--epochs", "1",
                   "--out-root", str(tmp_path / "runs"))
    assert code == 1
    diags = list((tmp_path / "runs").glob("train-*/error.txt"))
    assert diags and "source" in diags[0].read_text()


def test_eval_emits_reports_and_summary(tiny_data, tmp_path, capsys):
    out = tmp_path / "eval_out"
    code = run_cli("eval", "eval-d", "--data", str(tiny_data), "--method", "erm",
                   "--k", "2", "--seeds", "0", "1", "--epochs", "2", "--batch", "16",
                   "--repr-dim", "8", "--classifier-hidden", "6",
                   "--lstm-hidden", "12", "--out", str(out),
                   "--out-root", str(tmp_path / "runs"))
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["files"]:
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["protocol"] == "eval-d" and summary["seeds"] == [0, 1]
    # summary is recomputable from the per-seed reports
    per_seed = [json.loads((out / ("report_seed%d.json" % s)).read_text())
                for s in (0, 1)]
    avg = np.mean([r["ood_avg"] for r in per_seed])
    assert abs(summary["ood_avg_mean"] - avg) < 1e-12
    csv_lines = (out / "summary.csv").read_text().strip().splitlines()
    assert csv_lines[0] == "dataset,method,ood_avg_mean,ood_avg_std,ood_wrt_mean,ood_wrt_std"


def test_eval_k_too_large_fails(tiny_data, tmp_path, capsys):
    code = run_cli("eval", "eval-s", "--data", str(tiny_data), "--method", "erm",
                   "--k", "5", "--seeds", "0", "--epochs", "1",
                   "--out", str(tmp_path / "eo"), "--out-root", str(tmp_path / "runs"))
    assert code == 1


def test_verify_theory_all(tmp_path, capsys):
    out = tmp_path / "theory.json"
    code = run_cli("verify-theory", "all", "--trials", "200", "--seed", "0",
                   "--out", str(out))
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and all("pass" in ln for ln in lines)
    reports = json.loads(out.read_text())
    assert {r["name"] for r in reports} == {"lemma1", "prop1", "pinsker"}
    assert all(r["passed"] for r in reports)


def test_verify_theory_zero_trials_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run_cli("verify-theory", "all", "--trials", "0")
    assert exc.value.code == 2


def test_export_boundary_cli(tiny_data, tmp_path, capsys):
    assert run_cli(*_train_args(tiny_data, tmp_path)) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    out = tmp_path / "grid.csv"
    code = run_cli("export-boundary", "--run", str(run_dir), "--target", "4",
                   "--resolution", "10", "--out", str(out))
    assert code == 0
    assert len(out.read_text().strip().splitlines()) == 101


def test_run_root_env_var(tiny_data, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NSDG_RUN_ROOT", str(tmp_path / "envruns"))
    args = list(_train_args(tiny_data, tmp_path))
    args.remove("--out-root")
    args.remove(str(tmp_path / "runs"))
    assert run_cli(*args) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    assert str(tmp_path / "envruns") in str(run_dir)
