import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from rida.cli import dataset_defaults, main, read_config
from rida.graphio import load_dataset, read_edges
from rida.haa import apply_flips, read_diff

from conftest import exact_budget

FAST = ["--K", "4", "--surrogate-epochs", "10"]


def run(*argv):
    return main([str(a) for a in argv])


def test_help_and_version(capsys):
    assert run("--help") == 0
    assert run("--version") == 0
    out = capsys.readouterr().out
    for name in ("mask", "attack", "eval", "reproduce", "heatmap"):
        assert name in out


def test_entry_point_is_installed(tmp_path, toy_dataset):
    proc = subprocess.run(
        [sys.executable, "-m", "rida.cli", "mask", "--data", str(toy_dataset),
         "--out", str(tmp_path / "m.tsv")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m.tsv").exists()


@pytest.mark.parametrize("flag, value", [("--alpha", "1.5"), ("--beta", "-0.1"), ("--mask-seed", "-3"),
                                         ("--alpha", "abc")])
def test_mask_rejects_bad_values(tmp_path, toy_dataset, capsys, flag, value):
    assert run("mask", "--data", toy_dataset, "--out", tmp_path / "m.tsv", flag, value) == 2
    assert flag in capsys.readouterr().err
    assert not (tmp_path / "m.tsv").exists()


def test_attack_rejects_zero_budget(tmp_path, toy_dataset, capsys):
    assert run("attack", "--data", toy_dataset, "--out", tmp_path, "--epsilon", "0") == 2
    assert "--epsilon" in capsys.readouterr().err


def test_missing_required_option(toy_dataset, capsys):
    assert run("mask", "--data", toy_dataset) == 2
    assert "--out" in capsys.readouterr().err


def test_missing_dataset_is_io_error(tmp_path):
    assert run("mask", "--data", tmp_path / "nowhere", "--out", tmp_path / "m.tsv") == 1


def test_malformed_dataset_is_invalid(tmp_path, toy_dataset):
    broken = tmp_path / "broken"
    shutil.copytree(toy_dataset, broken)
    with (broken / "edges.tsv").open("a") as fh:
        fh.write("0\tx\n")
    assert run("mask", "--data", broken, "--out", tmp_path / "m.tsv") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, toy_dataset):
    assert run("attack", "--data", toy_dataset, "--out", tmp_path, *FAST,
               "--surrogate-lr", "1e200") == 3


def test_mask_is_byte_reproducible(tmp_path, toy_dataset):
    args = ("mask", "--data", toy_dataset, "--alpha", "0.3", "--beta", "0.7", "--mask-seed", "5")
    assert run(*args, "--out", tmp_path / "a.tsv") == 0
    assert run(*args, "--out", tmp_path / "b.tsv") == 0
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    _, x, _ = load_dataset(toy_dataset)
    expected = int(np.floor(0.7 * x.n + 1e-9)) * int(np.floor(0.3 * x.d + 1e-9))
    assert len((tmp_path / "a.tsv").read_text().splitlines()) == expected


def test_config_echo_reproduces_run(tmp_path, toy_dataset):
    assert run("mask", "--data", toy_dataset, "--out", tmp_path / "a.tsv", "--mask-seed", "9",
               "--alpha", "0.5") == 0
    echo = tmp_path / "a.tsv.config"
    cfg = read_config(echo)
    assert cfg["mask_seed"] == "9" and cfg["alpha"] == "0.5"
    # replaying the echo (with only the output redirected) gives the same bytes
    assert run("mask", "--config", echo, "--out", tmp_path / "b.tsv") == 0
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_flags_override_config(tmp_path, toy_dataset):
    conf = tmp_path / "c.txt"
    conf.write_text(f"# comment\ndata = {toy_dataset}\nalpha = 0.5\nmask-seed = 2\n")
    assert run("mask", "--config", conf, "--alpha", "0.2", "--out", tmp_path / "m.tsv") == 0
    cfg = read_config(tmp_path / "m.tsv.config")
    assert cfg["alpha"] == "0.2" and cfg["mask_seed"] == "2"


def test_config_rejects_unknown_and_bad_keys(tmp_path, toy_dataset):
    conf = tmp_path / "c.txt"
    conf.write_text(f"data = {toy_dataset}\ncolour = blue\n")
    assert run("mask", "--config", conf, "--out", tmp_path / "m.tsv") == 2
    conf.write_text(f"data = {toy_dataset}\nalpha = 7\n")
    assert run("mask", "--config", conf, "--out", tmp_path / "m.tsv") == 2


def test_attack_then_eval(tmp_path, toy_dataset):
    out = tmp_path / "atk"
    assert run("attack", "--data", toy_dataset, "--out", out, "--epsilon", "0.1", *FAST) == 0
    clean, _, _ = load_dataset(toy_dataset)
    flips = read_diff(out / "diff.txt")
    summary = json.loads((out / "attack.json").read_text())
    assert len(flips) == summary["flips"] == summary["budget"] == exact_budget(clean.num_edges, 0.1)
    attacked = read_edges(out / "edges.tsv", clean.n)
    assert np.array_equal(apply_flips(clean, flips).edges, attacked.edges)
    assert read_config(out / "config.txt")["epsilon"] == "0.1"

    common = ("--data", toy_dataset, "--runs", "2", "--target-epochs", "20", "--epsilon", "0.1")
    assert run("eval", *common, "--diff", out / "diff.txt", "--out", tmp_path / "e1") == 0
    assert run("eval", *common, "--attacked", out / "edges.tsv", "--out", tmp_path / "e2") == 0
    r1 = json.loads((tmp_path / "e1" / "results.json").read_text())
    r2 = json.loads((tmp_path / "e2" / "results.json").read_text())
    assert r1["attacks"]["rida"]["runs"] == r2["attacks"]["rida"]["runs"]
    assert r1["clean"] == r2["clean"]


def test_eval_needs_exactly_one_source(tmp_path, toy_dataset):
    assert run("eval", "--data", toy_dataset, "--out", tmp_path) == 2


def test_dataset_defaults():
    assert dataset_defaults("cora") == {"K": 16, "delta": 0.1}
    assert dataset_defaults("citeseer")["K"] == 8
    assert dataset_defaults("cora-ml")["delta"] == 0.2


def test_reproduce_rejects_unknown_dataset(tmp_path, capsys):
    assert run("reproduce", "--dataset", "pubmed", "--out", tmp_path) == 2
    assert "--dataset" in capsys.readouterr().err


def test_reproduce_missing_data_root(tmp_path):
    assert run("reproduce", "--dataset", "cora", "--data-root", tmp_path, "--out", tmp_path / "o") == 1


def test_reproduce_uses_dataset_defaults(tmp_path, toy_dataset):
    root = tmp_path / "root"
    shutil.copytree(toy_dataset, root / "cora-ml")
    out = tmp_path / "out"
    assert run("reproduce", "--dataset", "cora-ml", "--data-root", root, "--out", out, "--runs", "2",
               "--target-epochs", "20", "--surrogate-epochs", "5", "--baselines", "dice",
               "--label-fraction", "0.3") == 0
    echo = read_config(out / "config.txt")
    assert echo["delta"] == "0.2" and echo["K"] == "16"
    report = json.loads((out / "results.json").read_text())
    assert set(report["attacks"]) == {"rida", "dice"}
    assert report["config"]["delta"] == 0.2


def test_heatmap(tmp_path, toy_dataset):
    citeseer = tmp_path / "citeseer"
    shutil.copytree(toy_dataset, citeseer)
    assert run("heatmap", "--data", citeseer, "--out", tmp_path / "h.csv") == 0
    grid = np.loadtxt(tmp_path / "h.csv", delimiter=",")
    assert grid.shape == (40, 40)
    assert np.all(grid <= 1e-9) and np.all(grid >= -12 - 1e-9)
    assert read_config(tmp_path / "h.csv.config")["K"] == "8"
