"""Command line entry point.

Subcommands:
    infer          run the full pipeline on a scene, write gaussians + depth
    render         rasterize a saved gaussian set against a scene's targets
    depth          run the pipeline and export only the depth maps
    gen-synthetic  write a self-contained synthetic scene directory
    init-weights   materialize seeded weights as a TSA1 archive
    check-grad     compare analytic rasterizer gradients with finite differences
    dump-features  run the pipeline and dump every intermediate feature map

Exit codes: 0 on success, 2 for validation errors, 3 for I/O failures,
4 when a numerical failure (non-finite value) is detected. Thread count
comes from --threads, falling back to SPLATFORGE_THREADS, then 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, pipeline, synthetic
from .errors import IOFailure, NumericalFailure, ValidationError
from .gaussians import GaussianSet
from .imgio import write_png
from .manifest import PipelineConfig, load_manifest
from .params import ParamStore
from .tensors import write_tsf1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _thread_count(args: argparse.Namespace) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    env = os.environ.get("SPLATFORGE_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
    else:
        cfg = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = PipelineConfig.from_dict({**json.loads(cfg.to_json()), "seed": args.seed})
    return cfg


def _load_store(args: argparse.Namespace, cfg: PipelineConfig) -> ParamStore:
    if getattr(args, "weights", None):
        return ParamStore.load(args.weights)
    return pipeline.init_weights(cfg)


def _run_infer(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.scene)
    store = _load_store(args, cfg)
    threads = _thread_count(args)
    result = pipeline.infer(manifest, cfg, store, depth_override=args.depth_override,
                            threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.gaussians.save(out / "gaussians.gsp")
    pipeline.dump_depths(result, out, manifest.near, manifest.far)
    if args.dump:
        pipeline.dump_features(result, out / "features")
    print(f"wrote {result.gaussians.count} gaussians to {out / 'gaussians.gsp'}")
    return EXIT_OK


def _run_render(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.scene)
    gs = GaussianSet.load(args.gaussians)
    h, w = _scene_image_dims(manifest)
    pairs = pipeline.render_targets(gs, manifest, cfg, width=w, height=h,
                                    threads=_thread_count(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (render, _truth) in enumerate(pairs):
        write_png(out / f"render_{i:02d}.png", render.image)
    report = pipeline.evaluation_report(pairs, cfg)
    (out / "metrics.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if "psnr_db" in report:
        print(f"rendered {len(pairs)} targets, mean psnr {report['psnr_db']:.2f} dB")
    else:
        print(f"rendered {len(pairs)} targets (no ground truth for metrics)")
    return EXIT_OK


def _scene_image_dims(manifest) -> tuple:
    from .imgio import read_image

    img = read_image(manifest.resolve(manifest.views[0].image_path))
    return img.shape[0], img.shape[1]


def _run_depth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.scene)
    store = _load_store(args, cfg)
    result = pipeline.infer(manifest, cfg, store, depth_override=args.depth_override,
                            threads=_thread_count(args))
    path = pipeline.dump_depths(result, args.out, manifest.near, manifest.far)
    print(f"wrote depth stack to {path}")
    return EXIT_OK


def _run_gen_synthetic(args: argparse.Namespace) -> int:
    manifest_path = synthetic.generate_scene(args.kind, args.seed, args.width,
                                             args.height, args.out)
    print(f"generated {args.kind} scene at {manifest_path}")
    return EXIT_OK


def _run_init_weights(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    store = pipeline.init_weights(cfg)
    out = Path(args.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "weights.tsa"
    store.save(out)
    print(f"wrote {len(store.names())} weight blocks to {out}")
    return EXIT_OK


def _run_check_grad(args: argparse.Namespace) -> int:
    seeds = list(range(args.seed, args.seed + args.scenes))
    report = gradcheck.run_check(seeds)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def _run_dump_features(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.scene)
    store = _load_store(args, cfg)
    result = pipeline.infer(manifest, cfg, store, threads=_thread_count(args))
    written = pipeline.dump_features(result, args.out)
    write_tsf1(Path(args.out) / "sentence.tsf", np.stack(result.embeddings))
    print(f"dumped {len(written)} feature maps to {args.out}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, scene: bool = True) -> None:
    if scene:
        p.add_argument("--scene", required=True, help="scene manifest JSON")
    p.add_argument("--config", help="pipeline config JSON (defaults used if omitted)")
    p.add_argument("--weights", help="TSA1 weight archive (seeded init if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (default: SPLATFORGE_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splatforge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("infer", help="images -> gaussians + depth")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--depth-override", help="TSF1 (K, H, W) depth stack replacing predicted depth")
    p.add_argument("--dump", action="store_true", help="also dump intermediate feature maps")
    p.set_defaults(fn=_run_infer)

    p = sub.add_parser("render", help="gaussians + target cameras -> images")
    p.add_argument("gaussians", help="GSP1 gaussian set")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_run_render)

    p = sub.add_parser("depth", help="images -> depth maps only")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--depth-override", help="TSF1 (K, H, W) depth stack replacing predicted depth")
    p.set_defaults(fn=_run_depth)

    p = sub.add_parser("gen-synthetic", help="write a synthetic scene directory")
    p.add_argument("kind", choices=sorted(synthetic.KINDS))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", required=True, help="scene directory to create")
    p.set_defaults(fn=_run_gen_synthetic)

    p = sub.add_parser("init-weights", help="materialize seeded weights")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="weights file (or directory)")
    p.set_defaults(fn=_run_init_weights)

    p = sub.add_parser("check-grad", help="finite-difference check of the rasterizer backward")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=4, help="number of random scenes")
    p.set_defaults(fn=_run_check_grad)

    p = sub.add_parser("dump-features", help="dump every intermediate feature map")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_run_dump_features)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
