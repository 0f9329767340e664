"""Deterministic synthetic scenes with closed-form ground truth.

Three generators:

  * textured-plane: K translated views of an infinite fronto-parallel
    plane carrying a band-limited procedural texture. Images, target
    views, and depth are all analytic, which makes the scene an oracle
    for the geometry + rasterization path.
  * two-plane-occlusion: a textured card floating in front of a textured
    backdrop; ground-truth depth takes exactly two distinct values.
  * photo-consistent-features: feature grids for two views sampled from
    one continuous field on a plane at a known candidate depth, so the
    plane-sweep cost volume has an exact analytic winner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .costvolume import DepthCandidates, make_candidates
from .errors import InvalidRange
from .geometry import CameraParams, warp_grid
from .imgio import write_png
from .manifest import camera_to_record, save_manifest
from .tensors import FeatureMap, write_tsf1

KIND_PLANE = "textured-plane"
KIND_TWO_PLANE = "two-plane-occlusion"
KIND_FEATURES = "photo-consistent-features"
KINDS = (KIND_PLANE, KIND_TWO_PLANE, KIND_FEATURES)


@dataclass
class CosineTexture:
    """Smooth RGB texture on a plane: per-channel cosine mixtures that can
    be evaluated at arbitrary continuous coordinates."""

    freqs: np.ndarray   # (M, 2) cycles per world unit
    phases: np.ndarray  # (M,)
    amps: np.ndarray    # (M, 3)

    def eval(self, xw: np.ndarray, yw: np.ndarray) -> np.ndarray:
        """(..., 3) RGB in [0, 1] at world plane coordinates."""
        args = (
            2.0 * np.pi * (self.freqs[:, 0, None] * xw.reshape(1, -1)
                           + self.freqs[:, 1, None] * yw.reshape(1, -1))
            + self.phases[:, None]
        )
        waves = np.cos(args)  # (M, P)
        rgb = 0.5 + self.amps.T @ waves  # (3, P)
        out = rgb.T.reshape(xw.shape + (3,))
        return np.clip(out, 0.0, 1.0)


def make_texture(rng: np.random.Generator, amplitude: float = 0.35,
                 freq_lo: float = 0.2, freq_hi: float = 1.2, waves: int = 6) -> CosineTexture:
    freqs = rng.uniform(freq_lo, freq_hi, size=(waves, 2)) * rng.choice([-1.0, 1.0], size=(waves, 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=waves)
    raw = rng.uniform(0.3, 1.0, size=(waves, 3))
    amps = raw * (amplitude / raw.sum(axis=0, keepdims=True))
    return CosineTexture(freqs=freqs, phases=phases, amps=amps)


def _axis_camera(center_x: float, width: int, height: int, near: float, far: float,
                 focal: float, center_y: float = 0.0) -> CameraParams:
    """Identity-rotation camera whose center sits at (center_x, center_y, 0)."""
    return CameraParams(
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        rotation=np.eye(3),
        translation=np.array([-center_x, -center_y, 0.0]),
        near=near,
        far=far,
    )


def _plane_hit_coords(cam: CameraParams, depth: float, width: int, height: int):
    """World (x, y) where each pixel ray meets the plane z = depth.

    Only valid for identity-rotation cameras at z = 0.
    """
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    cx_w = -cam.translation[0]
    cy_w = -cam.translation[1]
    xw = cx_w + depth * (xs - cam.cx) / cam.fx
    yw = cy_w + depth * (ys - cam.cy) / cam.fy
    return xw, yw


@dataclass
class PlaneScene:
    cams: List[CameraParams]
    target_cams: List[CameraParams]
    texture: CosineTexture
    plane_depth: float
    width: int
    height: int
    near: float
    far: float

    def render(self, cam: CameraParams) -> np.ndarray:
        xw, yw = _plane_hit_coords(cam, self.plane_depth, self.width, self.height)
        return self.texture.eval(xw, yw)

    def depth(self, cam: CameraParams) -> np.ndarray:
        return np.full((self.height, self.width), self.plane_depth)


def plane_scene(seed: int, width: int = 64, height: int = 64, n_views: int = 2,
                n_targets: int = 1, baseline: float = 0.4, plane_depth: float = 4.0) -> PlaneScene:
    rng = np.random.default_rng(seed)
    texture = make_texture(rng)
    focal = 1.25 * width
    near, far = plane_depth * 0.5, plane_depth * 2.0
    span = baseline * (n_views - 1)
    cams = [
        _axis_camera(-span / 2.0 + i * baseline, width, height, near, far, focal)
        for i in range(n_views)
    ]
    # targets sit strictly between the extreme source centers
    target_cams = [
        _axis_camera(-span / 2.0 + span * (j + 1) / (n_targets + 1) + 0.07,
                     width, height, near, far, focal)
        for j in range(n_targets)
    ]
    return PlaneScene(cams, target_cams, texture, plane_depth, width, height, near, far)


@dataclass
class TwoPlaneScene:
    cams: List[CameraParams]
    target_cams: List[CameraParams]
    tex_near: CosineTexture
    tex_far: CosineTexture
    d_near: float
    d_far: float
    rect: Tuple[float, float, float, float]  # x0, x1, y0, y1 on the near plane
    width: int
    height: int
    near: float
    far: float

    def _mask(self, cam: CameraParams) -> np.ndarray:
        xw, yw = _plane_hit_coords(cam, self.d_near, self.width, self.height)
        x0, x1, y0, y1 = self.rect
        return (xw >= x0) & (xw <= x1) & (yw >= y0) & (yw <= y1)

    def render(self, cam: CameraParams) -> np.ndarray:
        mask = self._mask(cam)
        xn, yn = _plane_hit_coords(cam, self.d_near, self.width, self.height)
        xf, yf = _plane_hit_coords(cam, self.d_far, self.width, self.height)
        img = self.tex_far.eval(xf, yf)
        img[mask] = self.tex_near.eval(xn, yn)[mask]
        return img

    def depth(self, cam: CameraParams) -> np.ndarray:
        return np.where(self._mask(cam), self.d_near, self.d_far)


def two_plane_scene(seed: int, width: int = 64, height: int = 64, n_views: int = 2,
                    n_targets: int = 1, baseline: float = 0.3) -> TwoPlaneScene:
    rng = np.random.default_rng(seed)
    d_near, d_far = 3.0, 6.0
    tex_near = make_texture(rng)
    tex_far = make_texture(rng)
    focal = 1.25 * width
    near, far = d_near * 0.5, d_far * 1.5
    span = baseline * (n_views - 1)
    cams = [
        _axis_camera(-span / 2.0 + i * baseline, width, height, near, far, focal)
        for i in range(n_views)
    ]
    target_cams = [
        _axis_camera(-span / 2.0 + span * (j + 1) / (n_targets + 1) + 0.05,
                     width, height, near, far, focal)
        for j in range(n_targets)
    ]
    # card roughly centered, covering about a third of the frame
    half_w = 0.45 * d_near * width / focal
    rect = (-half_w * 0.6, half_w * 0.6, -half_w * 0.5, half_w * 0.5)
    return TwoPlaneScene(cams, target_cams, tex_near, tex_far, d_near, d_far, rect,
                         width, height, near, far)


# ---------------------------------------------------------------------------
# photo-consistent feature fixture
# ---------------------------------------------------------------------------


@dataclass
class FeatureField:
    """Continuous multi-channel field on the plane z = depth."""

    freqs: np.ndarray   # (C, M, 2)
    phases: np.ndarray  # (C, M)
    amps: np.ndarray    # (C, M)

    def eval(self, xw: np.ndarray, yw: np.ndarray) -> np.ndarray:
        c, m, _ = self.freqs.shape
        flat_x = xw.reshape(-1)
        flat_y = yw.reshape(-1)
        args = (
            2.0 * np.pi * (self.freqs[:, :, 0, None] * flat_x[None, None, :]
                           + self.freqs[:, :, 1, None] * flat_y[None, None, :])
            + self.phases[:, :, None]
        )
        vals = np.einsum("cm,cmp->cp", self.amps, np.cos(args))
        return vals.reshape((c,) + xw.shape)


@dataclass
class PhotoConsistentFixture:
    features: List[FeatureMap]
    cams: List[CameraParams]           # defined at the feature grid (stride 1)
    candidates: DepthCandidates
    true_index: int
    interior: np.ndarray               # (h, w) ref-view pixels with in-bound warps

    @property
    def true_depth(self) -> float:
        return float(self.candidates.values[self.true_index])


def photoconsistent_fixture(seed: int, size: int = 64, channels: int = 24,
                            depth_count: int = 32, true_index: int = 13,
                            baseline: float = 1.2) -> PhotoConsistentFixture:
    """Two feature views that agree exactly on a plane at one candidate.

    Cameras are expressed directly at the feature grid, so consumers pass
    stride=1 to the cost-volume builder. The requested baseline is snapped
    so the disparity at the true candidate is a whole number of pixels:
    the warp then lands on source grid points, bilinear sampling is exact,
    and the true candidate scores the full feature energy while fractional
    neighbors are attenuated.
    """
    if not (0 <= true_index < depth_count):
        raise InvalidRange(f"true_index {true_index} outside 0..{depth_count - 1}")
    rng = np.random.default_rng(seed)
    near, far = 2.0, 8.0
    cands = make_candidates(near, far, depth_count, spacing="inverse")
    d_true = float(cands.values[true_index])
    focal = float(size)
    disparity = max(1.0, np.rint(focal * baseline / d_true))
    baseline = disparity * d_true / focal
    cams = [
        _axis_camera(0.0, size, size, near, far, focal),
        _axis_camera(baseline, size, size, near, far, focal),
    ]
    waves = 8
    # Wavelengths of roughly 3..8 px at the true depth: long enough to stay
    # under Nyquist on the sample grid, short enough that the ~1 px disparity
    # step between neighboring candidates decorrelates the match.
    f_lo = focal / (8.0 * d_true)
    f_hi = focal / (3.0 * d_true)
    freqs = rng.uniform(f_lo, f_hi, size=(channels, waves, 2)) * rng.choice(
        [-1.0, 1.0], size=(channels, waves, 2)
    )
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(channels, waves))
    amps = rng.uniform(0.3, 1.0, size=(channels, waves))
    amps *= 3.0 / np.sqrt((amps ** 2).sum(axis=1, keepdims=True))  # channel rms ~ 2.1
    fieldf = FeatureField(freqs=freqs, phases=phases, amps=amps)
    feats = []
    for i, cam in enumerate(cams):
        xw, yw = _plane_hit_coords(cam, d_true, size, size)
        feats.append(FeatureMap(fieldf.eval(xw, yw), role="refined", view_index=i))
    xs, ys, zs = warp_grid(size, size, d_true, cams[0], cams[1])
    interior = (zs > 0) & (xs >= 0.0) & (xs <= size - 1.0) & (ys >= 0.0) & (ys <= size - 1.0)
    return PhotoConsistentFixture(feats, cams, cands, true_index, interior)


# ---------------------------------------------------------------------------
# scene directory writer
# ---------------------------------------------------------------------------

_DESCRIPTIONS = {
    KIND_PLANE: "a flat wall covered in smooth color gradients",
    KIND_TWO_PLANE: "a floating textured card in front of a painted backdrop",
}


def generate_scene(kind: str, seed: int, width: int, height: int, out_dir) -> Path:
    """Write a complete scene directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == KIND_FEATURES:
        return _write_feature_fixture(seed, min(width, height), out)
    if kind == KIND_PLANE:
        scene = plane_scene(seed, width=width, height=height)
    elif kind == KIND_TWO_PLANE:
        scene = two_plane_scene(seed, width=width, height=height)
    else:
        raise InvalidRange(f"unknown synthetic kind {kind!r}; choose from {KINDS}")

    views = []
    depth_stack = []
    for i, cam in enumerate(scene.cams):
        name = f"view_{i:02d}.png"
        write_png(out / name, scene.render(cam))
        depth_stack.append(scene.depth(cam))
        rec = camera_to_record(cam)
        rec["image_path"] = name
        rec["description"] = _DESCRIPTIONS[kind]
        views.append(rec)
    targets = []
    for j, cam in enumerate(scene.target_cams):
        name = f"target_{j:02d}.png"
        write_png(out / name, scene.render(cam))
        rec = camera_to_record(cam)
        rec["image_path"] = name
        targets.append(rec)
    write_tsf1(out / "depth_gt.tsf", np.stack(depth_stack, axis=0))
    manifest_path = out / "manifest.json"
    save_manifest(manifest_path, scene.near, scene.far, views, targets)
    return manifest_path


def _write_feature_fixture(seed: int, size: int, out: Path) -> Path:
    fx = photoconsistent_fixture(seed, size=size)
    for i, feat in enumerate(fx.features):
        write_tsf1(out / f"features_{i:02d}.tsf", feat.data)
    doc = {
        "kind": KIND_FEATURES,
        "near": fx.cams[0].near,
        "far": fx.cams[0].far,
        "depth_count": fx.candidates.count,
        "spacing": fx.candidates.spacing,
        "true_index": fx.true_index,
        "true_depth": fx.true_depth,
        "stride": 1,
        "cameras": [camera_to_record(c) for c in fx.cams],
        "features": [f"features_{i:02d}.tsf" for i in range(len(fx.features))],
    }
    path = out / "fixture.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
