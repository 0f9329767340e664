"""End-to-end forward inference: images in, gaussians out.

The stages run strictly in order per view with shared weights: providers
produce the depth-prior and segmentation streams, the image encoder and
cross-view attention produce the convolutional and cross-view streams,
text-routed fusion merges them into one refined map per view, the
plane-sweep decoder turns those into depth and confidence, and the
prediction heads emit one gaussian per source pixel. Every stage output
is checked for non-finite values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import costvolume, crossview, fusion, gaussians as gh, metrics as met
from .errors import DimsMismatch, NumericalFailure, TooFewViews
from .gaussians import GaussianSet, SH_C0, sh_band_count
from .geometry import CameraParams, DepthMap
from .imgio import read_image, write_depth_png16, write_png_gray
from .manifest import PipelineConfig, SceneManifest
from .params import BlockSpec, ParamStore, init_params
from .providers import load_feature, sentence_embedding
from .renderer import RenderConfig, RenderOutput, rasterize
from .tensors import FeatureMap, read_tsf1, write_tsf1

ORACLE_OPACITY = 0.98
ORACLE_SCALE_FACTOR = 0.4


@dataclass
class InferResult:
    gaussians: GaussianSet
    images: List[np.ndarray]
    cams: List[CameraParams]
    depths: List[DepthMap]            # refined, image resolution
    coarse_depths: List[DepthMap]     # feature resolution
    confidences: List[np.ndarray]
    conv_feats: List[FeatureMap]
    cross_feats: List[FeatureMap]
    traces: List[fusion.FusionTrace]
    volumes: List[costvolume.CostVolume]
    candidates: costvolume.DepthCandidates
    embeddings: List[np.ndarray]


def weight_specs(cfg: PipelineConfig) -> List[BlockSpec]:
    """Full parameter inventory; shapes depend only on the config."""
    specs: List[BlockSpec] = []
    specs += crossview.param_specs(cfg.c_f, cfg.mvin_blocks)
    specs += fusion.param_specs(
        stream_channels={
            fusion.STREAM_SEG: cfg.seg_channels,
            fusion.STREAM_DEPTH: cfg.depth_prior_channels,
            fusion.STREAM_CROSS: cfg.c_f,
        },
        c_t=cfg.c_t,
        groups=cfg.tsfm_groups,
        route_dim=cfg.sentence_dim,
        route_hidden=cfg.route_hidden,
    )
    specs += costvolume.param_specs(
        cfg.c_t, cfg.c_f, cfg.depth_count, cfg.volume_hidden, cfg.depthref_hidden,
        cfg.composite_channels,
    )
    specs += gh.param_specs(
        cfg.c_f, cfg.depth_count, cfg.sh_degree, cfg.opacity_hidden, cfg.shape_hidden
    )
    return specs


def init_weights(cfg: PipelineConfig) -> ParamStore:
    return init_params(weight_specs(cfg), cfg.seed)


def _ensure_finite(stage: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure(f"non-finite values out of stage {stage!r}")


def _load_images(manifest: SceneManifest) -> Tuple[List[np.ndarray], List[CameraParams]]:
    images = []
    cams = []
    shape = None
    for i, view in enumerate(manifest.views):
        img = read_image(manifest.resolve(view.image_path))
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DimsMismatch(
                f"view {i} image is {img.shape[1]}x{img.shape[0]}, expected "
                f"{shape[1]}x{shape[0]}"
            )
        images.append(img.transpose(2, 0, 1))  # (3, H, W)
        cams.append(view.camera)
    return images, cams


def _oracle_gaussians(
    images: List[np.ndarray], cams: List[CameraParams], depths: List[DepthMap], bands: int
) -> GaussianSet:
    """Geometry-faithful parameterization used with injected depth: colors
    are lifted straight from the source pixels, shapes are isotropic with
    a footprint matching the pixel spacing at that depth."""
    centers = gh.predict_centers(depths, cams)
    n = centers.shape[0]
    opac = np.full(n, ORACLE_OPACITY)
    rots = np.zeros((n, 4))
    rots[:, 0] = 1.0
    scale_chunks = []
    sh_chunks = []
    for img, cam, dm in zip(images, cams, depths):
        s = (ORACLE_SCALE_FACTOR / cam.fx) * dm.values.reshape(-1)
        scale_chunks.append(np.repeat(s[:, None], 3, axis=1))
        rgb = img.reshape(3, -1).T
        shc = np.zeros((rgb.shape[0], 3, bands))
        shc[:, :, 0] = (rgb - 0.5) / SH_C0
        sh_chunks.append(shc)
    return GaussianSet(centers, opac, rots, np.concatenate(scale_chunks),
                       np.concatenate(sh_chunks))


def infer(
    manifest: SceneManifest,
    cfg: PipelineConfig,
    store: Optional[ParamStore] = None,
    depth_override: Optional[str] = None,
    threads: int = 1,
) -> InferResult:
    """Run the full forward pipeline on one scene."""
    if store is None:
        store = init_weights(cfg)
    images, cams = _load_images(manifest)
    k = len(images)
    if k < 2:
        raise TooFewViews(f"inference needs at least two views, manifest has {k}")
    h, w = images[0].shape[1], images[0].shape[2]

    # provider streams -------------------------------------------------------
    dp_cfg = cfg.depth_prior_provider()
    seg_cfg = cfg.seg_provider()
    depth_priors = [
        load_feature(dp_cfg, i, h, w,
                     path=manifest.resolve(manifest.views[i].depth_prior_path))
        for i in range(k)
    ]
    segs = [
        load_feature(seg_cfg, i, h, w, path=manifest.resolve(manifest.views[i].seg_path))
        for i in range(k)
    ]
    scene_text = manifest.description()
    embeddings = []
    for i in range(k):
        text = manifest.views[i].description or scene_text
        path = manifest.resolve(manifest.views[i].sentence_path)
        embeddings.append(sentence_embedding(cfg.sentence_provider(), text, path=path).values)
    _ensure_finite("providers", *embeddings, *[f.data for f in depth_priors + segs])

    # image encoder and cross-view exchange ----------------------------------
    def _encode(i: int) -> FeatureMap:
        return crossview.extract_features(images[i], store, view_index=i)

    if threads > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            conv_feats = list(pool.map(_encode, range(k)))
    else:
        conv_feats = [_encode(i) for i in range(k)]
    cross_feats = crossview.cross_view_attend(
        conv_feats, store, blocks=cfg.mvin_blocks, window=cfg.mvin_window,
        heads=cfg.mvin_heads,
    )
    _ensure_finite("crossview", *[f.data for f in conv_feats + cross_feats])

    fh, fw = conv_feats[0].data.shape[1], conv_feats[0].data.shape[2]
    if depth_priors[0].data.shape[1:] != (fh, fw):
        raise DimsMismatch(
            f"provider grid {depth_priors[0].data.shape[1:]} does not match the "
            f"encoder grid {(fh, fw)}"
        )

    # text-routed fusion -------------------------------------------------------
    def _fuse(i: int) -> fusion.FusionTrace:
        return fusion.fuse_view(
            segs[i], depth_priors[i], cross_feats[i], embeddings[i], store,
            target_h=fh, target_w=fw, groups=cfg.tsfm_groups,
            window=cfg.tsfm_window, heads=cfg.tsfm_heads,
        )

    if threads > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(_fuse, range(k)))
    else:
        traces = [_fuse(i) for i in range(k)]
    refined = [t.refined for t in traces]
    _ensure_finite("fusion", *[t.refined.data for t in traces])

    # plane-sweep depth ---------------------------------------------------------
    candidates = costvolume.make_candidates(
        manifest.near, manifest.far, cfg.depth_count, spacing=cfg.depth_spacing
    )
    volumes = costvolume.build_cost_volume(refined, cams, candidates,
                                           stride=cfg.feature_stride)
    volumes = [costvolume.refine_volume(rf, vol, store)
               for rf, vol in zip(refined, volumes)]
    coarse = []
    confs = []
    for vol in volumes:
        dm, conf = costvolume.regress_depth(vol)
        coarse.append(dm)
        confs.append(conf)
    depths = costvolume.refine_depth(images, refined, conv_feats, coarse, store, cams)
    _ensure_finite("depth", *[d.values for d in depths], *confs)

    # gaussian prediction -------------------------------------------------------
    bands = sh_band_count(cfg.sh_degree)
    if depth_override is not None:
        stack = read_tsf1(depth_override)
        if stack.ndim != 3 or stack.shape != (k, h, w):
            raise DimsMismatch(
                f"depth override {depth_override} has shape {stack.shape}, expected {(k, h, w)}"
            )
        depths = [DepthMap(stack[i], view_index=i) for i in range(k)]
        gs = _oracle_gaussians(images, cams, depths, bands)
    else:
        centers = gh.predict_centers(depths, cams)
        opac = gh.predict_opacity(confs, store, (h, w))
        rots, scales, sh = gh.predict_shape_color(
            images, conv_feats, [v.scores for v in volumes], depths, cams, store,
            cfg.sh_degree,
        )
        gs = GaussianSet(centers, opac, rots, scales, sh)
    _ensure_finite("gaussians", gs.centers, gs.opacities, gs.rotations, gs.scales, gs.sh)

    return InferResult(
        gaussians=gs, images=images, cams=cams, depths=depths, coarse_depths=coarse,
        confidences=confs, conv_feats=conv_feats, cross_feats=cross_feats,
        traces=traces, volumes=volumes, candidates=candidates, embeddings=embeddings,
    )


def render_targets(
    gs: GaussianSet,
    manifest: SceneManifest,
    cfg: PipelineConfig,
    width: int,
    height: int,
    threads: int = 1,
) -> List[Tuple[RenderOutput, Optional[np.ndarray]]]:
    """Rasterize every manifest target; pairs each render with its ground
    truth image when the manifest provides one."""
    if not manifest.targets:
        return []
    rs = cfg.render

    def _one(idx: int):
        tgt = manifest.targets[idx]
        rcfg = RenderConfig(
            width=width, height=height, background=np.asarray(rs.background),
            tile=rs.tile, alpha_min=rs.alpha_min,
            transmittance_min=rs.transmittance_min, radius_sigma=rs.radius_sigma,
        )
        out = rasterize(gs, tgt.camera, rcfg)
        _ensure_finite("render", out.image)
        truth = None
        if tgt.image_path is not None:
            truth = read_image(manifest.resolve(tgt.image_path))
        return out, truth

    if threads > 1 and len(manifest.targets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_one, range(len(manifest.targets))))
    return [_one(i) for i in range(len(manifest.targets))]


def _normalized_gray(data: np.ndarray) -> np.ndarray:
    """Channel mean rescaled to [0, 1] for quick visual inspection."""
    gray = data.mean(axis=0)
    lo, hi = gray.min(), gray.max()
    if hi - lo < 1e-12:
        return np.zeros_like(gray)
    return (gray - lo) / (hi - lo)


def dump_features(result: InferResult, out_dir) -> List[Path]:
    """Write every intermediate feature map as TSF1 plus a grayscale PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for i in range(len(result.images)):
        maps: List[Tuple[str, np.ndarray]] = [
            ("conv", result.conv_feats[i].data),
            ("cross", result.cross_feats[i].data),
        ]
        maps += [(name, fm.data) for name, fm in result.traces[i].named_maps()]
        maps.append(("volume", result.volumes[i].scores))
        for name, data in maps:
            stem = out / f"view{i:02d}_{name}"
            write_tsf1(stem.with_suffix(".tsf"), data)
            write_png_gray(stem.with_suffix(".png"), _normalized_gray(data))
            written.append(stem.with_suffix(".tsf"))
    return written


def dump_depths(result: InferResult, out_dir, near: float, far: float) -> Path:
    """Refined depths as one (K, H, W) TSF1 stack plus 16-bit PNGs,
    confidences alongside."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stack = np.stack([d.values for d in result.depths])
    path = out / "depth.tsf"
    write_tsf1(path, stack)
    write_tsf1(out / "confidence.tsf", np.stack(result.confidences))
    for i, dm in enumerate(result.depths):
        write_depth_png16(out / f"depth_{i:02d}.png", dm.values, near, far)
    return path


def evaluation_report(
    pairs: List[Tuple[RenderOutput, Optional[np.ndarray]]], cfg: PipelineConfig
) -> Dict:
    """Metrics JSON document over the targets that have ground truth."""
    weights = cfg.loss_weights()
    per_target = []
    for i, (out, truth) in enumerate(pairs):
        if truth is None:
            continue
        total, parts = met.composite_loss(out.image, truth, weights)
        per_target.append(
            {
                "target": i,
                "psnr_db": met.psnr(out.image, truth),
                "ssim": parts["ssim"],
                "mse": parts["mse"],
                "loss_total": total,
                "loss_parts": parts,
            }
        )
    doc: Dict = {
        "loss_weights": {
            "mse": weights.mse,
            "perceptual": weights.perceptual,
            "ssim": weights.ssim,
        },
        "per_target": per_target,
    }
    if per_target:
        for key in ("psnr_db", "ssim", "mse", "loss_total"):
            doc[key] = float(np.mean([t[key] for t in per_target]))
        doc["loss_parts"] = {
            "mse": doc["mse"],
            "perceptual": None,
            "ssim": doc["ssim"],
        }
    return doc
