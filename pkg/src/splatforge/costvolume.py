"""Plane-sweep cost volumes and depth regression.

Depth is recovered by sweeping a set of fronto-parallel depth hypotheses:
for every reference pixel and candidate depth, the refined feature maps
of the other views are warped into the reference frame and correlated.
A small encoder-decoder sharpens the volume, softmax regression turns it
into depth plus confidence, and a second refiner upsamples the result to
image resolution guided by the source image. Weight namespace ``depthdec.``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import InvalidRange, ShapeMismatch, TooFewViews
from .geometry import CameraParams, DepthMap, warp_grid
from .params import BlockSpec, ParamStore, conv_spec
from .tensors import FeatureMap

PREFIX = "depthdec"

SPACING_LINEAR = "linear"
SPACING_INVERSE = "inverse"


@dataclass
class DepthCandidates:
    """Strictly increasing depth hypotheses shared by every pixel."""

    values: np.ndarray
    spacing: str = SPACING_INVERSE

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] < 2:
            raise InvalidRange("need at least two depth candidates")
        if not np.all(np.isfinite(self.values)) or not np.all(self.values > 0.0):
            raise InvalidRange("depth candidates must be positive and finite")
        if not np.all(np.diff(self.values) > 0.0):
            raise InvalidRange("depth candidates must be strictly increasing")

    @property
    def count(self) -> int:
        return self.values.shape[0]


@dataclass
class CostVolume:
    """Matching scores (D, h, w) for one reference view."""

    scores: np.ndarray
    candidates: DepthCandidates
    view_index: int = 0

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise ShapeMismatch(f"cost volume must be (D, h, w), got {self.scores.shape}")
        if self.scores.shape[0] != self.candidates.count:
            raise ShapeMismatch(
                f"{self.scores.shape[0]} score planes for {self.candidates.count} candidates"
            )
        if not np.all(np.isfinite(self.scores)):
            raise InvalidRange("cost volume contains non-finite scores")


def make_candidates(near: float, far: float, count: int, spacing: str = SPACING_INVERSE) -> DepthCandidates:
    """Depth hypotheses in [near, far]; endpoints are always included.

    "linear" spaces depths evenly; "inverse" spaces 1/depth evenly, which
    matches constant disparity steps for a translating camera.
    """
    if not (0.0 < near < far):
        raise InvalidRange(f"need 0 < near < far, got {near}, {far}")
    if count < 2:
        raise InvalidRange(f"need at least 2 candidates, got {count}")
    if spacing == SPACING_LINEAR:
        vals = np.linspace(near, far, count)
    elif spacing == SPACING_INVERSE:
        vals = 1.0 / np.linspace(1.0 / near, 1.0 / far, count)
        vals[0], vals[-1] = near, far  # kill round-off at the endpoints
    else:
        raise InvalidRange(f"unknown spacing {spacing!r}")
    return DepthCandidates(vals, spacing=spacing)


def build_cost_volume(
    features: Sequence[FeatureMap],
    cams: Sequence[CameraParams],
    candidates: DepthCandidates,
    stride: int = 4,
) -> List[CostVolume]:
    """Correlate every reference view against the others over all candidates.

    Cameras are given at image resolution; intrinsics are scaled by
    1/stride to the feature grid. The score is the mean over source
    views of dot(ref_vec, bilinear(src_vec)) / sqrt(C). A warped sample
    only counts when it has full bilinear support inside the source
    grid and positive source depth; pixels with no valid source score 0.
    """
    if len(features) < 2:
        raise TooFewViews("plane-sweep needs at least two views")
    if len(features) != len(cams):
        raise ShapeMismatch(f"{len(features)} feature maps vs {len(cams)} cameras")
    shape = features[0].data.shape
    for f in features:
        if f.data.shape != shape:
            raise ShapeMismatch("all feature maps must share one shape")
    c, h, w = shape
    scale = 1.0 / float(stride)
    fcams = [cam.scaled(scale) for cam in cams]
    norm = 1.0 / np.sqrt(float(c))
    volumes = []
    for i, ref in enumerate(features):
        scores = np.zeros((candidates.count, h, w), dtype=np.float64)
        counts = np.zeros((candidates.count, h, w), dtype=np.float64)
        for j, src in enumerate(features):
            if j == i:
                continue
            for d_idx in range(candidates.count):
                depth = float(candidates.values[d_idx])
                xs, ys, zs = warp_grid(h, w, depth, fcams[i], fcams[j])
                # A hair of slack keeps samples that land exactly on the
                # border from being dropped over a 1-ulp round-trip error.
                eps = 1e-6
                valid = (
                    (zs > 1e-9)
                    & (xs >= -eps)
                    & (xs <= w - 1.0 + eps)
                    & (ys >= -eps)
                    & (ys <= h - 1.0 + eps)
                )
                if not valid.any():
                    continue
                xs = np.clip(xs, 0.0, w - 1.0)
                ys = np.clip(ys, 0.0, h - 1.0)
                sampled = kernels.bilinear_sample(
                    src.data, np.where(valid, xs, 0.0), np.where(valid, ys, 0.0)
                )
                dots = np.einsum("chw,chw->hw", ref.data, sampled) * norm
                scores[d_idx] += np.where(valid, dots, 0.0)
                counts[d_idx] += valid
        nonzero = counts > 0
        scores[nonzero] /= counts[nonzero]
        volumes.append(CostVolume(scores, candidates, view_index=ref.view_index))
    return volumes


# ---------------------------------------------------------------------------
# volume refinement and regression
# ---------------------------------------------------------------------------


def _encdec_specs(name: str, c_in: int, hidden: int, c_out: int) -> List[BlockSpec]:
    """Two-scale encoder-decoder with one skip connection."""
    specs: List[BlockSpec] = []
    specs += conv_spec(f"{name}.e0", hidden, c_in, 3)
    specs += conv_spec(f"{name}.e1", 2 * hidden, hidden, 3)
    specs += conv_spec(f"{name}.mid", 2 * hidden, 2 * hidden, 3)
    specs += conv_spec(f"{name}.up", hidden, 2 * hidden, 3)
    specs += conv_spec(f"{name}.skip", hidden, 2 * hidden, 3)
    specs += conv_spec(f"{name}.out", c_out, hidden, 3)
    return specs


def _encdec(x: np.ndarray, store: ParamStore, name: str) -> np.ndarray:
    e0 = kernels.gelu(kernels.conv2d(x, store.get(f"{name}.e0.w"), store.get(f"{name}.e0.b")))
    e1 = kernels.gelu(
        kernels.conv2d(e0, store.get(f"{name}.e1.w"), store.get(f"{name}.e1.b"), stride=2, padding="zero")
    )
    mid = kernels.gelu(kernels.conv2d(e1, store.get(f"{name}.mid.w"), store.get(f"{name}.mid.b")))
    up = kernels.bilinear_resize(mid, e0.shape[1], e0.shape[2])
    up = kernels.gelu(kernels.conv2d(up, store.get(f"{name}.up.w"), store.get(f"{name}.up.b")))
    merged = kernels.gelu(
        kernels.conv2d(
            np.concatenate([e0, up], axis=0), store.get(f"{name}.skip.w"), store.get(f"{name}.skip.b")
        )
    )
    return kernels.conv2d(merged, store.get(f"{name}.out.w"), store.get(f"{name}.out.b"))


def param_specs(c_t: int, c_f: int, depth_count: int, vol_hidden: int, ref_hidden: int, composite_channels: int) -> List[BlockSpec]:
    specs: List[BlockSpec] = []
    specs += _encdec_specs(f"{PREFIX}.vol", c_t + depth_count, vol_hidden, depth_count)
    specs += conv_spec(f"{PREFIX}.composite", composite_channels, c_t + c_f, 3)
    specs += _encdec_specs(f"{PREFIX}.depth", 3 + composite_channels + 1, ref_hidden, 1)
    return specs


def refine_volume(feature: FeatureMap, volume: CostVolume, store: ParamStore) -> CostVolume:
    """Residual encoder-decoder sharpening of the raw matching scores.

    A zero output conv leaves the volume exactly unchanged.
    """
    if feature.data.shape[1:] != volume.scores.shape[1:]:
        raise ShapeMismatch(
            f"feature grid {feature.data.shape[1:]} vs volume grid {volume.scores.shape[1:]}"
        )
    stacked = np.concatenate([feature.data, volume.scores], axis=0)
    delta = _encdec(stacked, store, f"{PREFIX}.vol")
    return CostVolume(volume.scores + delta, volume.candidates, view_index=volume.view_index)


def regress_depth(volume: CostVolume) -> Tuple[DepthMap, np.ndarray]:
    """Softmax-weighted expectation over candidates, plus max-probability
    confidence. One-hot scores recover the candidate exactly; a constant
    volume gives the mean of the candidates and confidence 1/D.
    """
    probs = kernels.softmax(volume.scores, axis=0)
    depth = np.einsum("d,dhw->hw", volume.candidates.values, probs)
    confidence = probs.max(axis=0)
    return DepthMap(depth, view_index=volume.view_index), confidence


def refine_depth(
    images: Sequence[np.ndarray],
    refined_feats: Sequence[FeatureMap],
    conv_feats: Sequence[FeatureMap],
    depths: Sequence[DepthMap],
    store: ParamStore,
    cams: Sequence[CameraParams],
) -> List[DepthMap]:
    """Upsample coarse depth to image resolution with image guidance.

    Per view: fuse the refined and convolutional features with a 3x3 conv,
    bilinearly lift them and the coarse depth to image resolution, run the
    encoder-decoder on [image, features, depth], and add the predicted
    residual. Output is clamped to [near/2, far*2]. A zero output conv
    returns exactly the bilinear upsample of the input depth.
    """
    if not (len(images) == len(refined_feats) == len(conv_feats) == len(depths) == len(cams)):
        raise ShapeMismatch("refine_depth needs equal-length per-view sequences")
    out: List[DepthMap] = []
    for img, rf, cf, dm, cam in zip(images, refined_feats, conv_feats, depths, cams):
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[1], img.shape[2]
        if rf.data.shape[1:] != cf.data.shape[1:] or rf.data.shape[1:] != dm.values.shape:
            raise ShapeMismatch("coarse grids disagree across refine_depth inputs")
        comp = kernels.conv2d(
            np.concatenate([rf.data, cf.data], axis=0),
            store.get(f"{PREFIX}.composite.w"),
            store.get(f"{PREFIX}.composite.b"),
        )
        comp_up = kernels.bilinear_resize(comp, h, w)
        depth_up = kernels.bilinear_resize(dm.values[None, :, :], h, w)
        stacked = np.concatenate([img, comp_up, depth_up], axis=0)
        delta = _encdec(stacked, store, f"{PREFIX}.depth")
        refined = np.clip(depth_up[0] + delta[0], cam.near * 0.5, cam.far * 2.0)
        out.append(DepthMap(refined, view_index=dm.view_index))
    return out
