import json
import os
import subprocess
import sys

import numpy as np
import pytest

from defreg import io
from defreg.cli import main
from defreg.grid import VectorField, Volume, warp
from defreg.optim import hard_dice


def tree_bytes(root):
    out = {}
    for folder, _, files in os.walk(root):
        for name in files:
            path = os.path.join(folder, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"schedule": {"levels": 2, "iters": [20, 20]}}')
    return str(path)


def test_synth_sinusoid_layout_and_determinism(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a"), "--size", "16", "--amplitude", "2"]) == 0
    assert main(["synth", "--out", str(tmp_path / "b"), "--size", "16", "--amplitude", "2"]) == 0
    files = tree_bytes(tmp_path / "a")
    assert {"fixed_images/case000.nii.gz", "moving_images/case000.nii.gz", "gt_ddf.nii.gz",
            "landmarks.csv", "landmarks_moving.csv"} <= set(files)
    assert files == tree_bytes(tmp_path / "b")


def test_synth_spheres_has_labels(tmp_path):
    assert main(["synth", "--kind", "spheres", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fixed_labels" / "case000.nii.gz").exists()


@pytest.mark.parametrize("argv", [["--size", "8"], ["--kind", "cubes"]])
def test_synth_usage_errors(tmp_path, argv):
    assert main(["synth", "--out", str(tmp_path / "o")] + argv) == 2
    assert not (tmp_path / "o").exists()


def test_register_missing_config_is_usage_error(tmp_path):
    assert main(["register", "--fixed", "a", "--moving", "b", "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_register_bad_config_writes_nothing(tmp_path):
    main(["synth", "--out", str(tmp_path / "s"), "--size", "16"])
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"similarity": {"window": 4}}')
    out = tmp_path / "o"
    rc = main(["register", "--fixed", str(tmp_path / "s/fixed_images/case000.nii.gz"),
               "--moving", str(tmp_path / "s/moving_images/case000.nii.gz"),
               "--config", str(cfg), "--out", str(out)])
    assert rc == 2 and not out.exists()


def test_register_identity_and_labels(tmp_path):
    config = tmp_path / "defaults.json"
    config.write_text("{}")
    main(["synth", "--kind", "spheres", "--out", str(tmp_path / "s")])
    img = str(tmp_path / "s/fixed_images/case000.nii.gz")
    lab = str(tmp_path / "s/fixed_labels/case000.nii.gz")
    out = tmp_path / "r"
    rc = main(["register", "--fixed", img, "--moving", img, "--fixed-label", lab,
               "--moving-label", lab, "--config", str(config), "--out", str(out), "--quiet"])
    assert rc == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["jacobian"]["frac_nonpositive"] == 0.0
    assert metrics["dice"] > 0.95
    assert {"ddf.nii.gz", "warped.nii.gz", "warped_label.nii.gz", "metrics.json"} <= set(os.listdir(out))


def test_register_sinusoid_end_to_end(tmp_path, capfd):
    main(["synth", "--out", str(tmp_path / "s"), "--seed", "17"])
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{}")
    s = tmp_path / "s"
    rc = main(["register", "--fixed", str(s / "fixed_images/case000.nii.gz"),
               "--moving", str(s / "moving_images/case000.nii.gz"), "--config", str(cfg),
               "--out", str(tmp_path / "r"), "--gt-ddf", str(s / "gt_ddf.nii.gz"),
               "--landmarks-fixed", str(s / "landmarks.csv"),
               "--landmarks-moving", str(s / "landmarks_moving.csv")])
    assert rc == 0
    metrics = json.loads((tmp_path / "r/metrics.json").read_text())
    assert metrics["epe_foreground"] < 0.5
    assert metrics["tre_mm"] < 0.5
    err = capfd.readouterr().err
    assert "level=2 iter=0 total=" in err and "level=0 iter=49 total=" in err


def test_register_threads_env(tmp_path, config, monkeypatch):
    main(["synth", "--out", str(tmp_path / "s"), "--size", "16", "--amplitude", "2"])
    s = tmp_path / "s"
    args = ["register", "--fixed", str(s / "fixed_images/case000.nii.gz"),
            "--moving", str(s / "moving_images/case000.nii.gz"), "--config", config, "--quiet"]
    monkeypatch.setenv("DEFREG_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a/metrics.json").read_text())["config"]["threads"] == 2
    monkeypatch.setenv("DEFREG_THREADS", "many")
    assert main(args + ["--out", str(tmp_path / "b")]) == 2
    assert not (tmp_path / "b").exists()


def test_warp_matches_library(tmp_path, rng):
    vol = Volume(rng.uniform(size=(6, 6, 6)).astype(np.float32))
    ddf = VectorField(rng.uniform(-1, 1, (6, 6, 6, 3)).astype(np.float32))
    io.write_volume(vol, tmp_path / "v.nii")
    io.write_field(ddf, tmp_path / "d.nii.gz")
    assert main(["warp", "--image", str(tmp_path / "v.nii"), "--ddf", str(tmp_path / "d.nii.gz"),
                 "--out", str(tmp_path / "w.nii")]) == 0
    expected = np.asarray(warp(vol, ddf)).astype(np.float32)
    np.testing.assert_array_equal(io.read_volume(tmp_path / "w.nii").data, expected)
    io.write_field(VectorField.zeros((6, 6, 6)), tmp_path / "z.nii")
    main(["warp", "--image", str(tmp_path / "v.nii"), "--ddf", str(tmp_path / "z.nii"),
          "--out", str(tmp_path / "same.nii"), "--interp", "nearest"])
    np.testing.assert_array_equal(io.read_volume(tmp_path / "same.nii").data, vol.data)


def test_warp_dims_mismatch_exit_1(tmp_path):
    io.write_volume(Volume(np.zeros((4, 4, 4))), tmp_path / "v.nii")
    io.write_field(VectorField.zeros((4, 4, 5)), tmp_path / "d.nii")
    assert main(["warp", "--image", str(tmp_path / "v.nii"), "--ddf", str(tmp_path / "d.nii"),
                 "--out", str(tmp_path / "w.nii")]) == 1


def test_eval_dice_matches_voxel_count(tmp_path):
    main(["synth", "--kind", "spheres", "--out", str(tmp_path / "s")])
    fl = tmp_path / "s/fixed_labels/case000.nii.gz"
    ml = tmp_path / "s/moving_labels/case000.nii.gz"
    assert main(["eval", "--pred", str(ml), "--truth", str(fl), "--out", str(tmp_path / "m.json")]) == 0
    dice = json.loads((tmp_path / "m.json").read_text())["dice"]
    a, b = io.read_volume(fl).data > 0.5, io.read_volume(ml).data > 0.5
    assert abs(dice - 2 * np.sum(a & b) / (a.sum() + b.sum())) < 1e-9
    assert main(["eval", "--pred", str(fl), "--truth", str(fl), "--out", str(tmp_path / "i.json")]) == 0
    assert json.loads((tmp_path / "i.json").read_text()) == {"dice": 1.0}


def test_eval_landmark_count_mismatch(tmp_path):
    io.write_field(VectorField.zeros((4, 4, 4)), tmp_path / "d.nii")
    (tmp_path / "a.csv").write_text("1,1,1\n2,2,2\n")
    (tmp_path / "b.csv").write_text("1,1,1\n")
    rc = main(["eval", "--ddf", str(tmp_path / "d.nii"), "--landmarks-fixed", str(tmp_path / "a.csv"),
               "--landmarks-moving", str(tmp_path / "b.csv"), "--out", str(tmp_path / "m.json")])
    assert rc == 1 and not (tmp_path / "m.json").exists()


def _grouped(root, sizes):
    for g, n in enumerate(sizes):
        os.makedirs(root / "images" / f"g{g}", exist_ok=True)
        for i in range(n):
            (root / "images" / f"g{g}" / f"i{i}.nii").write_bytes(b"")


def test_sample_report_deterministic(tmp_path):
    _grouped(tmp_path / "L", [2, 3])
    argv = ["sample", "--layout", str(tmp_path / "L"), "--mode", "grouped", "--epochs", "20",
            "--seed", "4", "--option", "forward"]
    assert main(argv + ["--report", str(tmp_path / "a.json")]) == 0
    assert main(argv + ["--report", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    report = json.loads((tmp_path / "a.json").read_text())
    assert sum(report["group_counts"].values()) == 100


def test_sample_errors(tmp_path):
    _grouped(tmp_path / "L", [2, 1])
    assert main(["sample", "--layout", str(tmp_path / "L"), "--mode", "grouped",
                 "--report", str(tmp_path / "r.json")]) == 1
    assert main(["sample", "--layout", str(tmp_path / "L"), "--mode", "tri",
                 "--report", str(tmp_path / "r.json")]) == 2
    assert not (tmp_path / "r.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "defreg.cli", "synth", "--size", "8",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and "SpecInvalid" in proc.stderr
