"""Text-routed fusion of the three feature streams.

Per view, the segmentation, depth-prior, and cross-view streams are
aligned to a common grid and channel count, aggregated in place by
gated-convolution blocks, blended with weights routed from the scene's
sentence embedding, and refined against the aggregated streams through
window cross-attention. Weight namespace ``tsfm.``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import kernels
from .errors import InvalidRange, ShapeMismatch
from .params import (
    BlockSpec,
    ONES,
    ParamStore,
    conv_spec,
    depthwise_spec,
    layernorm_spec,
    linear_spec,
)
from .tensors import FeatureMap

PREFIX = "tsfm"

STREAM_SEG = "seg"
STREAM_DEPTH = "depth"
STREAM_CROSS = "cross"
STREAMS = (STREAM_SEG, STREAM_DEPTH, STREAM_CROSS)

_SUM_TOL = 1e-9


@dataclass
class FusionWeights:
    """Per-scene convex weights over (segmentation, depth-prior, cross-view)."""

    w_seg: float
    w_depth: float
    w_cross: float

    def __post_init__(self) -> None:
        vals = (self.w_seg, self.w_depth, self.w_cross)
        if any(v < 0.0 for v in vals):
            raise InvalidRange(f"fusion weights must be non-negative, got {vals}")
        if abs(sum(vals) - 1.0) > _SUM_TOL:
            raise InvalidRange(f"fusion weights must sum to 1, got {sum(vals)!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_seg, self.w_depth, self.w_cross], dtype=np.float64)


@dataclass
class FusionTrace:
    """Every intermediate map for one view, in pipeline order."""

    aligned: Dict[str, FeatureMap]
    aggregated: Dict[str, FeatureMap]
    weights: FusionWeights
    fused: FeatureMap
    branch_depth: FeatureMap
    branch_seg: FeatureMap
    branch_blend: FeatureMap
    refined: FeatureMap

    def named_maps(self) -> List[Tuple[str, FeatureMap]]:
        """Stable (name, map) listing for feature dumps."""
        out = []
        for s in STREAMS:
            out.append((f"aligned_{s}", self.aligned[s]))
        for s in STREAMS:
            out.append((f"aggregated_{s}", self.aggregated[s]))
        out.append(("fused", self.fused))
        out.append(("branch_depth", self.branch_depth))
        out.append(("branch_seg", self.branch_seg))
        out.append(("branch_blend", self.branch_blend))
        out.append(("refined", self.refined))
        return out


def param_specs(
    stream_channels: Dict[str, int],
    c_t: int,
    groups: int,
    route_dim: int,
    route_hidden: int,
) -> List[BlockSpec]:
    specs: List[BlockSpec] = []
    for stream in STREAMS:
        c_s = stream_channels[stream]
        specs += conv_spec(f"{PREFIX}.align.{stream}.inner.c1", c_s, c_s, 3)
        specs += conv_spec(f"{PREFIX}.align.{stream}.inner.c2", c_s, c_s, 3)
        specs += conv_spec(f"{PREFIX}.align.{stream}.outer.c1", c_t, c_s, 3)
        specs += conv_spec(f"{PREFIX}.align.{stream}.outer.c2", c_t, c_t, 3)
        for g in range(groups):
            base = f"{PREFIX}.agg.{stream}.g{g}"
            specs += layernorm_spec(f"{base}.sa.ln", c_t)
            specs += conv_spec(f"{base}.sa.gate", c_t, c_t, 1)
            specs += depthwise_spec(f"{base}.sa.dw3", c_t, 3)
            specs += depthwise_spec(f"{base}.sa.dw5", c_t, 5)
            specs += conv_spec(f"{base}.sa.out", c_t, c_t, 1)
            specs += layernorm_spec(f"{base}.ca.ln", c_t)
            specs += conv_spec(f"{base}.ca.expand", 2 * c_t, c_t, 1)
            specs.append(BlockSpec(f"{base}.ca.scale", (2 * c_t,), ONES))
            specs += conv_spec(f"{base}.ca.reduce", c_t, 2 * c_t, 1)
    specs += linear_spec(f"{PREFIX}.route.m1", route_hidden, route_dim)
    specs += linear_spec(f"{PREFIX}.route.m2", 3, route_hidden)
    for branch, pair in (("depth", "t2b"), ("depth", "b2t"), ("seg", "t2b"), ("seg", "b2t")):
        for proj in ("q", "k", "v"):
            specs += linear_spec(f"{PREFIX}.refine.{branch}.{pair}.{proj}", c_t, c_t)
    for branch in ("depth", "seg"):
        specs += conv_spec(f"{PREFIX}.refine.{branch}.merge", c_t, 2 * c_t, 1)
    specs += conv_spec(f"{PREFIX}.refine.gate.c1", c_t, 2 * c_t, 1)
    specs += conv_spec(f"{PREFIX}.refine.gate.c2", 1, c_t, 1)
    specs += conv_spec(f"{PREFIX}.refine.proj.c1", c_t, 3 * c_t, 3)
    specs += conv_spec(f"{PREFIX}.refine.proj.c2", c_t, c_t, 3)
    return specs


def _two_convs(x: np.ndarray, store: ParamStore, name: str) -> np.ndarray:
    h = kernels.gelu(kernels.conv2d(x, store.get(f"{name}.c1.w"), store.get(f"{name}.c1.b")))
    return kernels.conv2d(h, store.get(f"{name}.c2.w"), store.get(f"{name}.c2.b"))


def align(
    feature: FeatureMap,
    store: ParamStore,
    stream: str,
    target_h: int,
    target_w: int,
) -> FeatureMap:
    """Resample a stream to the shared grid and project it to C_t channels.

    out = P_outer(Down(x) + Down(P_inner(x))) where Down is bilinear and
    each projector is two reflect-padded 3x3 convs with a GELU between.
    Already-matching spatial dims make Down the identity.
    """
    if stream not in STREAMS:
        raise InvalidRange(f"unknown stream {stream!r}")
    x = feature.data
    inner = _two_convs(x, store, f"{PREFIX}.align.{stream}.inner")
    mixed = kernels.bilinear_resize(x, target_h, target_w) + kernels.bilinear_resize(
        inner, target_h, target_w
    )
    out = _two_convs(mixed, store, f"{PREFIX}.align.{stream}.outer")
    return FeatureMap(out, role=f"aligned_{stream}", view_index=feature.view_index)


def _spatial_block(x: np.ndarray, store: ParamStore, base: str) -> np.ndarray:
    y = kernels.layer_norm(x, store.get(f"{base}.ln.g"), store.get(f"{base}.ln.b"))
    gate = kernels.gelu(kernels.conv1x1(y, store.get(f"{base}.gate.w"), store.get(f"{base}.gate.b")))
    ctx = kernels.depthwise_conv2d(
        y, store.get(f"{base}.dw3.w"), store.get(f"{base}.dw3.b"), dilation=1
    ) + kernels.depthwise_conv2d(
        y, store.get(f"{base}.dw5.w"), store.get(f"{base}.dw5.b"), dilation=2
    )
    z = kernels.conv1x1(gate * ctx, store.get(f"{base}.out.w"), store.get(f"{base}.out.b"))
    return x + z


def _channel_block(x: np.ndarray, store: ParamStore, base: str) -> np.ndarray:
    y = kernels.layer_norm(x, store.get(f"{base}.ln.g"), store.get(f"{base}.ln.b"))
    h = kernels.gelu(kernels.conv1x1(y, store.get(f"{base}.expand.w"), store.get(f"{base}.expand.b")))
    h = h * store.get(f"{base}.scale")[:, None, None]
    z = kernels.conv1x1(h, store.get(f"{base}.reduce.w"), store.get(f"{base}.reduce.b"))
    return x + z


def aggregate(feature: FeatureMap, store: ParamStore, stream: str, groups: int) -> FeatureMap:
    """Stack of residual (spatial gate, channel gate) block pairs.

    groups=0 returns the input unchanged; zeroing each block's final
    conv collapses the stack to the identity as well.
    """
    if groups < 0:
        raise InvalidRange(f"groups must be >= 0, got {groups}")
    x = feature.data
    for g in range(groups):
        base = f"{PREFIX}.agg.{stream}.g{g}"
        x = _spatial_block(x, store, f"{base}.sa")
        x = _channel_block(x, store, f"{base}.ca")
    return FeatureMap(x, role=f"aggregated_{stream}", view_index=feature.view_index)


def route_weights(embedding: np.ndarray, store: ParamStore) -> FusionWeights:
    """Sentence embedding -> softmax over the three streams."""
    v = np.asarray(embedding, dtype=np.float64).reshape(-1)
    logits = kernels.mlp(
        v,
        store.get(f"{PREFIX}.route.m1.w"),
        store.get(f"{PREFIX}.route.m1.b"),
        store.get(f"{PREFIX}.route.m2.w"),
        store.get(f"{PREFIX}.route.m2.b"),
    )
    w = kernels.softmax(logits)
    # exact simplex projection: renormalize the float sum before validating
    w = w / np.sum(w)
    return FusionWeights(w_seg=float(w[0]), w_depth=float(w[1]), w_cross=float(w[2]))


def fuse(
    seg: FeatureMap, depth: FeatureMap, cross: FeatureMap, weights: FusionWeights
) -> FeatureMap:
    """Elementwise convex combination of the three aggregated streams."""
    if not (seg.data.shape == depth.data.shape == cross.data.shape):
        raise ShapeMismatch("fuse needs three maps with identical shapes")
    out = weights.w_seg * seg.data + weights.w_depth * depth.data + weights.w_cross * cross.data
    return FeatureMap(out, role="fused", view_index=seg.view_index)


def _window_cross(q_map, kv_map, store, name, window, heads):
    return kernels.window_attention(
        q_map,
        kv_map,
        store.get(f"{name}.q.w"),
        store.get(f"{name}.q.b"),
        store.get(f"{name}.k.w"),
        store.get(f"{name}.k.b"),
        store.get(f"{name}.v.w"),
        store.get(f"{name}.v.b"),
        window=window,
        heads=heads,
    )


def refine(
    fused: FeatureMap,
    depth_agg: FeatureMap,
    seg_agg: FeatureMap,
    store: ParamStore,
    window: int,
    heads: int,
) -> Tuple[FeatureMap, FeatureMap, FeatureMap, FeatureMap]:
    """Bidirectional window cross-attention between the fused map and the
    aggregated depth / segmentation streams, blended by a learned gate.

    Returns (branch_depth, branch_seg, branch_blend, refined).
    """
    branches: Dict[str, np.ndarray] = {}
    for branch, other in (("depth", depth_agg), ("seg", seg_agg)):
        fwd = _window_cross(fused.data, other.data, store, f"{PREFIX}.refine.{branch}.t2b", window, heads)
        bwd = _window_cross(other.data, fused.data, store, f"{PREFIX}.refine.{branch}.b2t", window, heads)
        cat = np.concatenate([fwd, bwd], axis=0)
        branches[branch] = kernels.conv1x1(
            cat, store.get(f"{PREFIX}.refine.{branch}.merge.w"), store.get(f"{PREFIX}.refine.{branch}.merge.b")
        )
    bd, bs = branches["depth"], branches["seg"]
    gh = kernels.gelu(
        kernels.conv1x1(
            np.concatenate([bd, bs], axis=0),
            store.get(f"{PREFIX}.refine.gate.c1.w"),
            store.get(f"{PREFIX}.refine.gate.c1.b"),
        )
    )
    gate = kernels.sigmoid(
        kernels.conv1x1(gh, store.get(f"{PREFIX}.refine.gate.c2.w"), store.get(f"{PREFIX}.refine.gate.c2.b"))
    )  # (1, h, w), broadcast over channels
    blend = gate * bd + (1.0 - gate) * bs
    stacked = np.concatenate([bs, bd, blend], axis=0)
    refined = _two_convs(stacked, store, f"{PREFIX}.refine.proj")
    vi = fused.view_index
    return (
        FeatureMap(bd, role="branch_depth", view_index=vi),
        FeatureMap(bs, role="branch_seg", view_index=vi),
        FeatureMap(blend, role="branch_blend", view_index=vi),
        FeatureMap(refined, role="refined", view_index=vi),
    )


def fuse_view(
    seg_feat: FeatureMap,
    depth_feat: FeatureMap,
    cross_feat: FeatureMap,
    embedding: np.ndarray,
    store: ParamStore,
    target_h: int,
    target_w: int,
    groups: int,
    window: int,
    heads: int,
) -> FusionTrace:
    """Full per-view fusion: align, aggregate, route, fuse, refine."""
    aligned = {
        STREAM_SEG: align(seg_feat, store, STREAM_SEG, target_h, target_w),
        STREAM_DEPTH: align(depth_feat, store, STREAM_DEPTH, target_h, target_w),
        STREAM_CROSS: align(cross_feat, store, STREAM_CROSS, target_h, target_w),
    }
    aggregated = {s: aggregate(aligned[s], store, s, groups) for s in STREAMS}
    weights = route_weights(embedding, store)
    fused = fuse(aggregated[STREAM_SEG], aggregated[STREAM_DEPTH], aggregated[STREAM_CROSS], weights)
    bd, bs, blend, refined = refine(
        fused, aggregated[STREAM_DEPTH], aggregated[STREAM_SEG], store, window, heads
    )
    return FusionTrace(
        aligned=aligned,
        aggregated=aggregated,
        weights=weights,
        fused=fused,
        branch_depth=bd,
        branch_seg=bs,
        branch_blend=blend,
        refined=refined,
    )
