"""CLI subcommands, exit codes, thread selection, and rerun determinism."""

import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from splatforge import pipeline
from splatforge.cli import (
    EXIT_IO,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    _thread_count,
    main,
)
from splatforge.gaussians import GaussianSet
from splatforge.imgio import read_image
from splatforge.manifest import PipelineConfig, load_manifest, save_manifest
from splatforge.params import ParamStore
from splatforge.tensors import read_tsf1

SMALL = dict(
    c_f=16,
    c_t=16,
    mvin_blocks=1,
    mvin_window=4,
    mvin_heads=2,
    tsfm_groups=1,
    tsfm_window=4,
    tsfm_heads=2,
    route_hidden=16,
    depth_count=8,
    volume_hidden=8,
    depthref_hidden=8,
    composite_channels=8,
    opacity_hidden=8,
    shape_hidden=16,
    depth_prior_channels=16,
    seg_channels=16,
    sentence_dim=32,
)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Scene directory plus a small-config JSON shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    code = main(
        [
            "gen-synthetic",
            "textured-plane",
            "--seed",
            "0",
            "--width",
            "32",
            "--height",
            "32",
            "--out",
            str(root / "scene"),
        ]
    )
    assert code == EXIT_OK
    PipelineConfig(**SMALL).save(root / "config.json")
    return root


def _tree_bytes(directory):
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


def _infer_args(workdir, out, extra=()):
    return [
        "infer",
        "--scene",
        str(workdir / "scene" / "manifest.json"),
        "--config",
        str(workdir / "config.json"),
        "--out",
        str(out),
        *extra,
    ]


# ---------------------------------------------------------------------------
# generation and inference
# ---------------------------------------------------------------------------


def test_gen_synthetic_writes_a_loadable_scene(workdir, capsys):
    scene = load_manifest(workdir / "scene" / "manifest.json")
    assert len(scene.views) == 2
    assert len(scene.targets) >= 1
    assert (workdir / "scene" / "depth_gt.tsf").exists()


def test_gen_synthetic_same_seed_same_bytes(tmp_path):
    argv = ["gen-synthetic", "two-plane-occlusion", "--seed", "3", "--width", "24",
            "--height", "24", "--out", ""]
    for sub in ("a", "b"):
        argv[-1] = str(tmp_path / sub)
        assert main(argv) == EXIT_OK
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_infer_writes_gaussians_and_depth(workdir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(_infer_args(workdir, out)) == EXIT_OK
    assert "2048 gaussians" in capsys.readouterr().out
    gs = GaussianSet.load(out / "gaussians.gsp")
    assert gs.count == 2 * 32 * 32
    assert read_tsf1(out / "depth.tsf").shape == (2, 32, 32)
    assert (out / "confidence.tsf").exists()
    assert (out / "depth_00.png").exists()


def test_infer_rerun_is_byte_identical(workdir, tmp_path):
    outs = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        assert main(_infer_args(workdir, out)) == EXIT_OK
        outs.append(out)
    for name in ("gaussians.gsp", "depth.tsf", "confidence.tsf"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_infer_threads_do_not_change_outputs(workdir, tmp_path):
    base = tmp_path / "t1"
    assert main(_infer_args(workdir, base, extra=("--threads", "1"))) == EXIT_OK
    threaded = tmp_path / "t4"
    assert main(_infer_args(workdir, threaded, extra=("--threads", "4"))) == EXIT_OK
    assert (base / "gaussians.gsp").read_bytes() == (threaded / "gaussians.gsp").read_bytes()


def test_infer_dump_flag_writes_features(workdir, tmp_path):
    out = tmp_path / "dumped"
    assert main(_infer_args(workdir, out, extra=("--dump",))) == EXIT_OK
    assert (out / "features" / "view00_conv.tsf").exists()
    assert (out / "features" / "view01_volume.png").exists()


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_single_view_scene_exits_validation(workdir, tmp_path, capsys):
    doc = json.loads((workdir / "scene" / "manifest.json").read_text())
    save_manifest(
        tmp_path / "single.json", near=doc["near"], far=doc["far"],
        views=doc["views"][:1], targets=[],
    )
    # image paths are relative to the manifest, so keep it beside the originals
    single = workdir / "scene" / "single.json"
    single.write_text((tmp_path / "single.json").read_text())
    code = main(
        ["infer", "--scene", str(single), "--config", str(workdir / "config.json"),
         "--out", str(tmp_path / "out")]
    )
    assert code == EXIT_VALIDATION
    assert "error:" in capsys.readouterr().err


def test_missing_scene_exits_io(workdir, tmp_path, capsys):
    code = main(
        ["infer", "--scene", str(tmp_path / "ghost.json"),
         "--config", str(workdir / "config.json"), "--out", str(tmp_path / "out")]
    )
    assert code == EXIT_IO
    assert "error:" in capsys.readouterr().err


def test_corrupt_gaussians_exit_io(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.gsp"
    bad.write_bytes(b"GSPX" + b"\x00" * 64)
    code = main(
        ["render", str(bad), "--scene", str(workdir / "scene" / "manifest.json"),
         "--out", str(tmp_path / "out")]
    )
    assert code == EXIT_IO
    capsys.readouterr()


def test_unknown_config_field_exits_validation(workdir, tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"seed": 0, "momentum": 0.9}), encoding="utf-8")
    code = main(
        ["infer", "--scene", str(workdir / "scene" / "manifest.json"),
         "--config", str(cfg), "--out", str(tmp_path / "out")]
    )
    assert code == EXIT_VALIDATION
    assert "momentum" in capsys.readouterr().err


def test_nan_weights_exit_numerical(workdir, tmp_path, capsys):
    cfg = PipelineConfig(**SMALL)
    store = pipeline.init_weights(cfg)
    poisoned = store.get("mvin.cf.stem1.w").copy()
    poisoned[...] = np.nan
    store.set_("mvin.cf.stem1.w", poisoned)
    weights = tmp_path / "poisoned.tsa"
    store.save(weights)
    code = main(_infer_args(workdir, tmp_path / "out", extra=("--weights", str(weights))))
    assert code == EXIT_NUMERICAL
    assert "error:" in capsys.readouterr().err


def test_bad_subcommand_argument_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["gen-synthetic", "impossible-kind", "--out", "/tmp/x"])
    assert excinfo.value.code == 2


# ---------------------------------------------------------------------------
# render / depth / weights / features
# ---------------------------------------------------------------------------


def test_render_writes_images_and_metrics(workdir, tmp_path, capsys):
    inferred = tmp_path / "inferred"
    assert main(_infer_args(workdir, inferred)) == EXIT_OK
    rendered = tmp_path / "rendered"
    code = main(
        ["render", str(inferred / "gaussians.gsp"),
         "--scene", str(workdir / "scene" / "manifest.json"),
         "--config", str(workdir / "config.json"), "--out", str(rendered)]
    )
    assert code == EXIT_OK
    assert "psnr" in capsys.readouterr().out
    assert (rendered / "render_00.png").exists()
    report = json.loads((rendered / "metrics.json").read_text())
    assert report["loss_weights"] == {"mse": 1.0, "perceptual": 0.05, "ssim": 0.03}
    assert report["per_target"]


def test_empty_gaussian_set_renders_background(workdir, tmp_path, capsys):
    empty = GaussianSet(
        np.zeros((0, 3)), np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)),
        np.zeros((0, 3, 1)),
    )
    path = tmp_path / "empty.gsp"
    empty.save(path)
    out = tmp_path / "out"
    code = main(
        ["render", str(path), "--scene", str(workdir / "scene" / "manifest.json"),
         "--out", str(out)]
    )
    assert code == EXIT_OK
    img = read_image(out / "render_00.png")
    np.testing.assert_array_equal(img, np.zeros((32, 32, 3)))
    capsys.readouterr()


def test_depth_subcommand_with_override(workdir, tmp_path, capsys):
    out = tmp_path / "depth"
    gt = workdir / "scene" / "depth_gt.tsf"
    code = main(
        ["depth", "--scene", str(workdir / "scene" / "manifest.json"),
         "--config", str(workdir / "config.json"), "--out", str(out),
         "--depth-override", str(gt)]
    )
    assert code == EXIT_OK
    capsys.readouterr()
    got = read_tsf1(out / "depth.tsf")
    np.testing.assert_array_equal(got.astype(np.float32), read_tsf1(gt).astype(np.float32))


def test_init_weights_file_and_directory(workdir, tmp_path, capsys):
    direct = tmp_path / "weights.tsa"
    assert main(["init-weights", "--config", str(workdir / "config.json"),
                 "--out", str(direct)]) == EXIT_OK
    into_dir = tmp_path / "wdir"
    assert main(["init-weights", "--config", str(workdir / "config.json"),
                 "--out", str(into_dir)]) == EXIT_OK
    assert (into_dir / "weights.tsa").exists()
    assert direct.read_bytes() == (into_dir / "weights.tsa").read_bytes()
    capsys.readouterr()

    store = ParamStore.load(direct)
    fresh = pipeline.init_weights(PipelineConfig(**SMALL))
    assert store.names() == fresh.names()
    for name in store.names():
        np.testing.assert_array_equal(store.get(name), fresh.get(name))


def test_init_weights_seed_override_changes_bytes(workdir, tmp_path, capsys):
    a = tmp_path / "a.tsa"
    b = tmp_path / "b.tsa"
    main(["init-weights", "--config", str(workdir / "config.json"), "--out", str(a)])
    main(["init-weights", "--config", str(workdir / "config.json"), "--seed", "9",
          "--out", str(b)])
    capsys.readouterr()
    assert a.read_bytes() != b.read_bytes()


def test_check_grad_reports_pass(capsys):
    code = main(["check-grad", "--seed", "0", "--scenes", "2"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert len(report["per_scene"]) == 2
    assert report["tolerance"] == 1e-3


def test_dump_features_subcommand(workdir, tmp_path, capsys):
    out = tmp_path / "feats"
    code = main(
        ["dump-features", "--scene", str(workdir / "scene" / "manifest.json"),
         "--config", str(workdir / "config.json"), "--out", str(out)]
    )
    assert code == EXIT_OK
    assert "dumped" in capsys.readouterr().out
    assert (out / "sentence.tsf").exists()
    assert (out / "view00_conv.tsf").exists()
    assert (out / "view01_cross.png").exists()


# ---------------------------------------------------------------------------
# thread selection
# ---------------------------------------------------------------------------


def test_threads_flag_beats_environment(monkeypatch):
    monkeypatch.setenv("SPLATFORGE_THREADS", "8")
    assert _thread_count(argparse.Namespace(threads=3)) == 3


def test_threads_environment_fallback(monkeypatch):
    monkeypatch.setenv("SPLATFORGE_THREADS", "5")
    assert _thread_count(argparse.Namespace(threads=None)) == 5


def test_threads_default_and_garbage_env(monkeypatch):
    monkeypatch.delenv("SPLATFORGE_THREADS", raising=False)
    assert _thread_count(argparse.Namespace(threads=None)) == 1
    monkeypatch.setenv("SPLATFORGE_THREADS", "many")
    assert _thread_count(argparse.Namespace(threads=None)) == 1
    monkeypatch.setenv("SPLATFORGE_THREADS", "0")
    assert _thread_count(argparse.Namespace(threads=None)) == 1
    assert _thread_count(argparse.Namespace(threads=0)) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "splatforge", "gen-synthetic", "textured-plane",
         "--seed", "1", "--width", "16", "--height", "16",
         "--out", str(tmp_path / "scene")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "scene" / "manifest.json").exists()
