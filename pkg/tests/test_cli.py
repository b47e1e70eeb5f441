import json
import os
import subprocess
import sys

import numpy as np
import pytest

from melidar import tensor_io
from melidar.cli import main, toy_dir
from melidar.model import OrientedBox3D


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--toy", "--out-dir", d, "--seed", 7) == 0
    return d


def test_bundled_toy_present():
    for name in ("rgb.melt", "depth.melt", "normals.melt", "config.json", "labels.jsonl"):
        assert (toy_dir() / name).is_file()
    depth, _ = tensor_io.read_tensor(toy_dir() / "depth.melt")
    assert depth.shape == (32, 64)


def test_simulate_outputs(sim_dir):
    amb, meta = tensor_io.read_tensor(sim_dir / "ambient.melt")
    refl, _ = tensor_io.read_tensor(sim_dir / "reflectance.melt")
    pts, _ = tensor_io.read_tensor(sim_dir / "points.melt")
    assert amb.shape == (32, 64) and refl.shape == (32, 64, 3) and pts.shape == (32, 64, 3, 5)
    assert meta["seed"] == 7


def test_simulate_deterministic(sim_dir, tmp_path):
    assert run("simulate", "--toy", "--out-dir", tmp_path, "--seed", 7, "--threads", 4) == 0
    for name in ("ambient.melt", "reflectance.melt", "points.melt"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ambient.melt", "points.melt", "reflectance.melt"]


def test_simulate_explicit_inputs(sim_dir, tmp_path):
    t = toy_dir()
    assert run("simulate", "--rgb", t / "rgb.melt", "--depth", t / "depth.melt", "--normals", t / "normals.melt",
               "--config", t / "config.json", "--out-dir", tmp_path, "--seed", 7) == 0
    assert (tmp_path / "points.melt").read_bytes() == (sim_dir / "points.melt").read_bytes()


def test_flag_overrides_config(tmp_path):
    assert run("simulate", "--toy", "--out-dir", tmp_path, "--bins", 2048, "--sbr", 20) == 0
    _, meta = tensor_io.read_tensor(tmp_path / "points.melt")
    assert meta["bins"] == 2048 and meta["sbr"] == 20


def test_reassign(sim_dir, tmp_path):
    assert run("reassign", "--cloud", sim_dir / "points.melt", "--out", tmp_path) == 0
    pen, _ = tensor_io.read_tensor(tmp_path / "penetrable.melt")
    imp, _ = tensor_io.read_tensor(tmp_path / "impenetrable.melt")
    pts, _ = tensor_io.read_tensor(sim_dir / "points.melt")
    assert len(pen) + len(imp) == int(pts[..., 4].sum()) and pen.shape[1] == 7


def test_encode_image(sim_dir, tmp_path):
    out = tmp_path / "img.melt"
    assert run("encode-image", "--cloud", sim_dir / "points.melt", "--ambient", sim_dir / "ambient.melt", "--out", out) == 0
    img, _ = tensor_io.read_tensor(out)
    amb, _ = tensor_io.read_tensor(sim_dir / "ambient.melt")
    assert img.shape == (32, 64, 4) and np.array_equal(img[..., 0], amb)


def test_encode_targets(sim_dir, tmp_path):
    assert run("reassign", "--cloud", sim_dir / "points.melt", "--out", tmp_path) == 0
    cfg = tmp_path / "codec.json"
    cfg.write_text(json.dumps({"search_range": 4.0, "bin_size": 0.5, "yaw_bins": 8}))
    out = tmp_path / "t.melt"
    assert run("encode-targets", "--labels", toy_dir() / "labels.jsonl", "--points", tmp_path / "impenetrable.melt",
               "--codec", cfg, "--out", out) == 0
    t, meta = tensor_io.read_tensor(out)
    fg = t[:, 0] == 1
    assert fg.any() and meta["yaw_bins"] == 8
    assert np.all(t[fg, 2:4] < 16) and np.all(t[~fg, 1] == -1)


def test_eval_self_match(capsys):
    gt = toy_dir() / "labels.jsonl"
    assert run("eval", "--gt", gt, "--det", gt, "--report", "json") == 0
    rep = json.loads(capsys.readouterr().out)
    scored = [r for r in rep["results"] if r["num_gt"] > 0]
    assert scored and all(r["ap"] == 1.0 for r in scored)
    assert all(r["ap"] is None for r in rep["results"] if r["num_gt"] == 0)


def test_eval_text(tmp_path, capsys):
    gt = tmp_path / "gt.jsonl"
    tensor_io.write_labels(gt, [OrientedBox3D(20, 0, 0, 1.5, 1.6, 3.9, 0)])
    assert run("eval", "--gt", gt, "--det", gt, "--class", "Car", "--iou", 0.7, "--difficulty", "easy") == 0
    out = capsys.readouterr().out
    assert "AP=100.00" in out and "gt=1" in out


def test_inspect(sim_dir, capsys):
    assert run("inspect", sim_dir / "points.melt") == 0
    out = capsys.readouterr().out
    assert "dims=[32, 64, 3, 5]" in out and "float32" in out and "echoes per slot" in out


def test_usage_error(capsys):
    assert run("simulate", "--bogus") == 2
    assert "usage" in capsys.readouterr().err


def test_io_error(tmp_path, capsys):
    assert run("inspect", tmp_path / "missing.melt") == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "FileNotFoundError"


def test_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.melt"
    bad.write_bytes(b"XXXX0000")
    assert run("inspect", bad) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "FormatError"


def test_make_toy_matches_bundle(tmp_path):
    assert run("make-toy", "--out-dir", tmp_path) == 0
    for name in ("rgb.melt", "depth.melt", "normals.melt", "labels.jsonl"):
        assert (tmp_path / name).read_bytes() == (toy_dir() / name).read_bytes()


def test_pure_python_fallback(tmp_path):
    env = dict(os.environ, MELIDAR_PURE_PYTHON="1")
    code = "import melidar.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    r = subprocess.run([sys.executable, "-m", "melidar", "simulate", "--toy", "--seed", "7", "--out-dir", str(tmp_path)],
                       env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
