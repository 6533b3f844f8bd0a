import csv
import json
import subprocess
import sys

import pytest

from itanet.cli import main

SMALL = ["--set", "data.synthetic.samples_per_class=12", "--set", "train.episodes=4",
         "--set", "eval.runs=2", "--set", "eval.episodes_per_run=3"]


def write_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"episodes": 4}, "data": {"synthetic": {"samples_per_class": 12}},
                                "eval": {"runs": 2, "episodes_per_run": 3}}))
    return str(path)


def test_train_eval_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["train", "--config", cfg, "--seed", "1", "--out-dir", out]) == 0
        assert main(["eval", "--config", cfg, "--seed", "1", "--out-dir", out]) == 0
        outs.append(tmp_path / name)
    for fname in ("checkpoint.itan", "losses.csv", "eval_report.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    report = json.loads((outs[0] / "eval_report.json").read_text())
    assert len(report["runs"]) == 2 and 0 <= report["mean"] <= 1


def test_overwrite_needs_force(tmp_path, capsys):
    out = str(tmp_path / "r")
    assert main(["train", "--out-dir", out, *SMALL]) == 0
    assert main(["train", "--out-dir", out, *SMALL]) != 0
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "output_exists"
    assert main(["train", "--out-dir", out, "--force", *SMALL]) == 0


def test_beta_zero_log(tmp_path):
    out = tmp_path / "r"
    assert main(["train", "--out-dir", str(out), "--set", "loss.beta=0", *SMALL]) == 0
    with open(out / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["episode", "L_meta", "L_sem", "L_all"]
    assert rows and all(r["L_all"] == r["L_meta"] for r in rows)


def test_gen_data_writes_manifest(tmp_path):
    out = tmp_path / "g"
    assert main(["gen-data", "--out-dir", str(out), "--set", "data.synthetic.samples_per_class=4",
                 "--precision", "f64"]) == 0
    manifest = json.loads((out / "data" / "manifest.json").read_text())
    assert manifest["precision"] == "f64" and len(manifest["videos"]) == 32
    assert main(["train", "--out-dir", str(out), "--set", f"data.manifest=\"{out / 'data' / 'manifest.json'}\"",
                 "--set", "train.episodes=2", "--set", "train.queries=1", "--precision", "f64"]) == 0


def test_grad_check_table(capsys):
    assert main(["grad-check"]) == 0
    text = capsys.readouterr().out
    assert "full_loss" in text and "FAIL" not in text


@pytest.mark.parametrize("argv, category", [
    (["train", "--config", "missing.json"], "config"),
    (["train", "--set", "nope.key=1"], "config"),
    (["train", "--set", "loss.beta"], "config"),
    (["eval", "--out-dir", "/nonexistent/dir"], "data"),
])
def test_errors_are_categorized(argv, category, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) != 0
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == category


def test_unknown_subcommand_prints_usage():
    proc = subprocess.run([sys.executable, "-m", "itanet", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage:" in proc.stderr
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "usage"
