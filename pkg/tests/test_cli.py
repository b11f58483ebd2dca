import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from trajetrack import data, rnn
from trajetrack.cli import main


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:     # argparse usage errors
        return exc.code


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("sim", "--scenario", "occlusion", "--seed", 1, "--out-dir", d / "occ") == 0
    assert run("sim", "--scenario", "cross", "--seed", 2, "--out-dir", d / "seqs" / "cross") == 0
    assert run("gen-data", "--gt-dir", d, "--out", d / "corpus.jsonl", "--num-train", 10,
               "--num-val", 2, "--seq-len", 30, "--seed", 0) == 0
    assert run("train", "--data", d / "corpus.jsonl", "--epochs", 2, "--hidden", 8, "--mixtures", 2,
               "--out", d / "model.json") == 0
    return d


def test_sim_outputs_and_determinism(work, tmp_path):
    assert {p.name for p in (work / "occ").iterdir()} >= {"gt.txt", "det.txt", "seqinfo.ini", "manifest.json"}
    assert run("sim", "--scenario", "occlusion", "--seed", 1, "--out-dir", tmp_path) == 0
    assert (tmp_path / "det.txt").read_bytes() == (work / "occ" / "det.txt").read_bytes()
    assert run("sim", "--scenario", "nope", "--out-dir", tmp_path) == 2


def test_gen_data(work, tmp_path):
    train, val, header = data.read_corpus(work / "corpus.jsonl")
    assert (len(train), len(val), header["seq_len"]) == (10, 2, 30)
    assert run("gen-data", "--gt-dir", tmp_path / "missing", "--out", tmp_path / "c.jsonl") == 2
    manifest = json.loads((work / "corpus.jsonl.manifest.json").read_text())
    assert manifest["subcommand"] == "gen-data" and manifest["seed"] == 0


def test_train_outputs(work, tmp_path):
    assert rnn.load_model(work / "model.json").config.hidden_dim == 8
    hist = list(csv.DictReader((work / "model.history.csv").open()))
    assert [int(h["epoch"]) for h in hist] == [0, 1, 2]
    assert (work / "model.history.svg").read_text().lstrip().startswith("<?xml")


def test_train_zero_epochs_emits_initial_model(work, tmp_path):
    out = tmp_path / "m0.json"
    assert run("train", "--data", work / "corpus.jsonl", "--epochs", 0, "--hidden", 4,
               "--mixtures", 1, "--seed", 5, "--out", out) == 0
    assert rnn.load_model(out).equal(rnn.init_params(rnn.ModelConfig(hidden_dim=4, mixtures=1), 5))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path):
    huge = [data.TrainingSequence(np.array([[0.0, 0.0], [1e300, -1e300], [-1e300, 1e300]]))] * 2
    data.write_corpus(tmp_path / "c.jsonl", huge, huge)
    assert run("train", "--data", tmp_path / "c.jsonl", "--epochs", 1, "--hidden", 4,
               "--mixtures", 1, "--out", tmp_path / "m.json") == 3


def test_track_variants(work, tmp_path):
    det, model = work / "occ" / "det.txt", work / "model.json"
    assert run("track", "--det", det, "--strategy", "none", "--out", tmp_path / "none.txt") == 0
    assert run("track", "--det", det, "--strategy", "kalman", "--occ", "--out", tmp_path / "k.txt") == 0
    assert run("track", "--det", det, "--model", model, "--strategy", "pbs", "--beam", 0,
               "--out", tmp_path / "x.txt") == 2
    assert run("track", "--det", det, "--strategy", "pbs", "--out", tmp_path / "x.txt") == 2
    assert run("track", "--det", tmp_path / "missing.txt", "--strategy", "none", "--out", tmp_path / "x.txt") == 2
    for s in ("gbs", "pbs"):
        assert run("track", "--det", det, "--model", model, "--strategy", s, "--beam", 1, "--occ",
                   "--seed", 3, "--out", tmp_path / f"{s}.txt") == 0
    assert (tmp_path / "gbs.txt").read_bytes() == (tmp_path / "pbs.txt").read_bytes()
    assert json.loads((tmp_path / "pbs.txt.manifest.json").read_text())["parameters"]["beam"] == 1


def test_eval(work, tmp_path):
    gt = work / "occ" / "gt.txt"
    assert run("eval", "--gt", gt, "--res", gt, "--out", tmp_path / "r.csv") == 0
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    assert [r["name"] for r in rows] == ["occ", "OVERALL"] and float(rows[0]["MOTA"]) == 1.0
    assert run("eval", "--gt", gt, "--res", tmp_path / "missing.txt", "--out", tmp_path / "r.csv") == 2


def test_eval_directory(work, tmp_path):
    res = tmp_path / "res"
    res.mkdir()
    (res / "cross.txt").write_bytes((work / "seqs" / "cross" / "gt.txt").read_bytes())
    assert run("eval", "--gt", work / "seqs", "--res", res, "--out", tmp_path / "r.csv") == 0
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    assert [r["name"] for r in rows] == ["cross", "OVERALL"]


def test_sweep(work, tmp_path, monkeypatch):
    args = ["sweep", "--det", work / "occ" / "det.txt", "--model", work / "model.json",
            "--bias-list", "0,1", "--beam-list", "1,3", "--runs", 2]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    rows = list(csv.DictReader((tmp_path / "a" / "sweep.csv").open()))
    assert len(rows) == 2 * 2 * 2 * 2
    assert list(rows[0]) == ["strategy", "bias", "beam", "run", "MOTA", "IDF1", "IDSW"]
    for m in ("MOTA", "IDF1", "IDSW"):
        assert (tmp_path / "a" / f"sweep_{m}.svg").exists()
    monkeypatch.setenv("TRAJE_THREADS", "3")
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_single_run_band_collapses(work, tmp_path):
    assert run("sweep", "--det", work / "occ" / "det.txt", "--model", work / "model.json",
               "--bias-list", "0.5", "--beam-list", "2", "--runs", 1, "--out-dir", tmp_path) == 0
    for r in csv.DictReader((tmp_path / "sweep_summary.csv").open()):
        assert r["MOTA_min"] == r["MOTA_mean"] == r["MOTA_max"]


def test_sweep_rejects_empty_lists(work, tmp_path):
    assert run("sweep", "--det", work / "occ" / "det.txt", "--model", work / "model.json",
               "--bias-list", "", "--out-dir", tmp_path) == 2
    assert run("sweep", "--det", work / "occ" / "det.txt", "--model", work / "model.json",
               "--strategies", "kalman", "--out-dir", tmp_path) == 2


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "trajetrack.cli", "sim", "--scenario", "cv",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and (tmp_path / "det.txt").exists()
