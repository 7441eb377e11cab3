import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from semflow import io
from semflow.cli import THREADS_ENV, default_threads, main
from semflow.metrics import MetricsReport


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    files = [f for f in cmp.common_files]
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    if mismatch or errors or cmp.left_only or cmp.right_only:
        return False
    return all(same_tree(os.path.join(a, d), os.path.join(b, d)) for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["synth", str(d), "--seed", "7"]) == 0
    return d


def test_synth_is_deterministic(tmp_path, scene_dir):
    assert main(["synth", str(tmp_path / "again"), "--seed", "7"]) == 0
    assert same_tree(scene_dir, tmp_path / "again")
    for name in ("image_L0.png", "disp_0.png", "flow.png", "masks_0.png", "calib.txt", "params.txt",
                 "gt/motions.txt", "gt/valid.png"):
        assert (scene_dir / name).is_file(), name


def test_synth_many(tmp_path):
    assert main(["synth", str(tmp_path), "--count", "2", "--seed", "3", "--clean", "--stages", "1"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["scene_0003", "scene_0004"]
    assert io.read_params(tmp_path / "scene_0003" / "params.txt").stages == 1


def test_run_zero_stages_reproduces_inputs(tmp_path, scene_dir, capsys):
    out = tmp_path / "out"
    assert main(["run", str(scene_dir), "--out", str(out), "--stages", "0"]) == 0
    for name in ("disp_0.png", "disp_1.png", "flow.png", "masks_0.png", "masks_1.png"):
        assert filecmp.cmp(out / name, scene_dir / name, shallow=False), name
    rep = MetricsReport.from_text(capsys.readouterr().out)
    assert "D1-fg" in rep.values and rep.seg_error is not None


def test_eval_identical_is_zero(tmp_path, scene_dir):
    report = tmp_path / "rep.txt"
    assert main(["eval", str(scene_dir / "gt"), str(scene_dir), "--report", str(report)]) == 0
    rep = MetricsReport.from_text(report.read_text())
    assert all(v == 0.0 for v in rep.values.values())
    assert rep.seg_error == 0.0


def test_run_one_stage_and_viz(tmp_path, scene_dir):
    out = tmp_path / "est"
    report = tmp_path / "rep.txt"
    assert main(["run", str(scene_dir), "--out", str(out), "--stages", "1", "--report", str(report)]) == 0
    rep = MetricsReport.from_text(report.read_text())
    init = tmp_path / "init.txt"
    assert main(["run", str(scene_dir), "--out", str(tmp_path / "o0"), "--stages", "0", "--report", str(init)]) == 0
    assert rep["D1-fg"] < MetricsReport.from_text(init.read_text())["D1-fg"]
    assert (out / "motions.txt").is_file()
    viz = tmp_path / "viz"
    assert main(["viz", str(out), "--out", str(viz), "--gt", str(scene_dir)]) == 0
    names = sorted(p.name for p in viz.iterdir())
    assert "flow_color.png" in names and "error_SF.png" in names


def test_stage_subcommand(tmp_path, scene_dir):
    out = tmp_path / "st"
    assert main(["stage", str(scene_dir), "--out", str(out), "--stage", "1", "--step", "seg",
                 "--report", str(tmp_path / "r.txt")]) == 0
    masks = io.read_mask(out / "masks_0.png")
    assert masks.shape == io.read_mask(scene_dir / "masks_0.png").shape
    # seg only: disparity and flow untouched
    assert filecmp.cmp(out / "disp_0.png", scene_dir / "disp_0.png", shallow=False)
    out2 = tmp_path / "st2"
    assert main(["stage", str(scene_dir), "--out", str(out2), "--stage", "2", "--step", "geom",
                 "--state", str(out)]) == 0
    np.testing.assert_array_equal(io.read_mask(out2 / "masks_0.png"), masks)


def test_train_writes_params(tmp_path):
    root = tmp_path / "train"
    assert main(["synth", str(root), "--count", "2", "--seed", "100"]) == 0
    params = tmp_path / "learned.txt"
    assert main(["train", str(root), "--out", str(params), "--stages", "1", "--epochs", "2"]) == 0
    cfg = io.read_params(params)
    assert cfg.stages == 1 and np.all(np.isfinite(cfg.params.seg.lambdas))


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing"), str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("[nonsense]\n")
    assert main(["synth", str(tmp_path / "s"), "--params", str(bad)]) == 2
    assert main(["train", str(tmp_path), "--out", str(tmp_path / "p.txt")]) == 2
    assert main(["run", str(tmp_path), "--out", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_threads_environment(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert default_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_threads() == 3
    monkeypatch.setenv(THREADS_ENV, "many")
    assert main(["eval", "a", "b"]) == 2


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "semflow.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "run", "stage", "eval", "train", "viz"):
        assert cmd in res.stdout
