import json
import os
import subprocess
import sys

import pytest

from tabattack.cli import run

FAST_CAA = {"attack": "caa", "moeva": {"n_gen": 5, "n_off": 10, "n_pop": 20}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out", str(d / "data"), "--rows", "400"]) == 0
    assert run([
        "train", "--data", str(d / "data/data.csv"), "--spec", str(d / "data/spec.json"),
        "--constraints", str(d / "data/constraints.txt"), "--out", str(d / "model.json"),
    ]) == 0
    (d / "caa.json").write_text(json.dumps(FAST_CAA))
    return d


def test_synth_writes_files_and_manifest(workdir):
    for name in ("data.csv", "spec.json", "constraints.txt", "data.csv.manifest.json"):
        assert (workdir / "data" / name).exists()
    manifest = json.loads((workdir / "data/data.csv.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seeds"] == [0] and manifest["build_id"]


def test_attack_report_and_manifest(workdir):
    out = workdir / "attack.json"
    args = ["attack", "--model", str(workdir / "model.json"), "--config", str(workdir / "caa.json"),
            "--out", str(out), "--csv", str(workdir / "attack.csv"), "--seeds", "0,1", "--threads", "1"]
    assert run(args) == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "attack" and doc["seeds"] == [0, 1]
    assert doc["attacks"][0]["config"]["moeva"]["n_gen"] == 5
    manifest = json.loads((workdir / "attack.json.manifest.json").read_text())
    assert manifest["argv"] == args
    assert str(workdir / "attack.csv") in manifest["outputs"]


def test_reports_repeat_byte_for_byte(workdir):
    texts = []
    for i in range(2):
        out = workdir / f"rep{i}.json"
        assert run(["evaluate", "--model", str(workdir / "model.json"), "--attack", "cpgd,capgd",
                    "--out", str(out), "--no-timing"]) == 0
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_sweep_and_ablate(workdir):
    assert run(["sweep", "--model", str(workdir / "model.json"), "--config", str(workdir / "caa.json"),
                "--axis", "epsilon", "--values", "0.25,1", "--out", str(workdir / "sweep.json")]) == 0
    assert json.loads((workdir / "sweep.json").read_text())["grid"] == {"axis": "epsilon", "values": [0.25, 1.0]}
    assert run(["ablate", "--model", str(workdir / "model.json"), "--out", str(workdir / "abl.json")]) == 0
    names = json.loads((workdir / "abl.json").read_text())["coverage"]["matrix"]["names"]
    assert len(names) == 5


@pytest.mark.parametrize(
    "argv, message",
    [
        ([], "command is required"),
        (["attack", "--model", "nope.json", "--attack", "capgd", "--out", "x.json"], "nope.json"),
        (["attack", "--model", "{model}", "--attack", "fgsm", "--out", "{d}/x.json"], "cpgd, capgd, moeva, caa"),
        (["sweep", "--model", "{model}", "--axis", "epsilon", "--values", "0,1", "--out", "{d}/x.json"], "epsilon"),
        (["attack", "--model", "{model}", "--out", "{d}/x.json"], "--attack is required"),
        (["attack", "--model", "{model}", "--attack", "capgd"], "--out"),
        (["train", "--data", "{d}/data/data.csv", "--spec", "{d}/data/spec.json", "--out", "{d}/m.json",
          "--config", "{d}/bad_train.json"], "unknown key"),
    ],
)
def test_usage_errors_exit_1(workdir, capsys, argv, message):
    (workdir / "bad_train.json").write_text(json.dumps({"epochz": 3}))
    argv = [a.format(d=workdir, model=workdir / "model.json") for a in argv]
    assert run(argv) == 1
    assert message in capsys.readouterr().err


def test_broken_constraints_exit_1(workdir, capsys):
    (workdir / "bad.txt").write_text("low <= = high\n")
    assert run(["attack", "--model", str(workdir / "model.json"), "--attack", "cpgd",
                "--constraints", str(workdir / "bad.txt"), "--out", str(workdir / "x.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_divergence_exits_2(workdir, capsys):
    (workdir / "wild.json").write_text(json.dumps({"optimizer": "sgd", "learning_rate": 1e200, "epochs": 2}))
    assert run(["train", "--data", str(workdir / "data/data.csv"), "--spec", str(workdir / "data/spec.json"),
                "--config", str(workdir / "wild.json"), "--out", str(workdir / "wild_model.json")]) == 2
    assert "diverged" in capsys.readouterr().err


def test_log_level_validated(monkeypatch, capsys):
    monkeypatch.setenv("TABATTACK_LOG", "chatty")
    assert run(["synth", "--out", "unused"]) == 1
    assert "TABATTACK_LOG" in capsys.readouterr().err


def test_console_entry_point(workdir):
    env = dict(os.environ, TABATTACK_LOG="error")
    proc = subprocess.run([sys.executable, "-m", "tabattack", "--version"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and proc.stdout.startswith("tabattack ")
