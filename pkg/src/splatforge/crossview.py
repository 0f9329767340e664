"""Shallow image encoder and multi-view window-attention exchange.

Every view runs the same weights (namespace ``mvin.``): a two-stage
stride-2 CNN produces per-view convolutional features at 1/4 resolution,
then a stack of interleaved self / cross window-attention blocks trades
information between views. Cross attention aggregates the other views by
arithmetic mean, so the whole stage is equivariant to view permutation.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from . import kernels
from .errors import ShapeMismatch, TooFewViews
from .params import BlockSpec, ParamStore, conv_spec, layernorm_spec, linear_spec
from .tensors import FeatureMap

PREFIX = "mvin"

ROLE_IMAGE = "image_cnn"
ROLE_CROSS_VIEW = "cross_view"


def param_specs(c_f: int, blocks: int) -> List[BlockSpec]:
    """Parameter inventory for the encoder plus ``blocks`` attention blocks."""
    c_half = max(1, c_f // 2)
    specs: List[BlockSpec] = []
    specs += conv_spec(f"{PREFIX}.cf.stem1", c_half, 3, 3)
    for r in (1, 2):
        specs += conv_spec(f"{PREFIX}.cf.s1r{r}.c1", c_half, c_half, 3)
        specs += conv_spec(f"{PREFIX}.cf.s1r{r}.c2", c_half, c_half, 3)
    specs += conv_spec(f"{PREFIX}.cf.stem2", c_f, c_half, 3)
    for r in (1, 2):
        specs += conv_spec(f"{PREFIX}.cf.s2r{r}.c1", c_f, c_f, 3)
        specs += conv_spec(f"{PREFIX}.cf.s2r{r}.c2", c_f, c_f, 3)
    for b in range(blocks):
        base = f"{PREFIX}.attn.b{b}"
        specs += layernorm_spec(f"{base}.self.ln", c_f)
        for proj in ("q", "k", "v"):
            specs += linear_spec(f"{base}.self.{proj}", c_f, c_f)
        specs += layernorm_spec(f"{base}.cross.lnq", c_f)
        specs += layernorm_spec(f"{base}.cross.lnkv", c_f)
        for proj in ("q", "k", "v"):
            specs += linear_spec(f"{base}.cross.{proj}", c_f, c_f)
    return specs


def _residual_block(x: np.ndarray, store: ParamStore, name: str) -> np.ndarray:
    h = kernels.gelu(kernels.conv2d(x, store.get(f"{name}.c1.w"), store.get(f"{name}.c1.b")))
    h = kernels.conv2d(h, store.get(f"{name}.c2.w"), store.get(f"{name}.c2.b"))
    return x + h


def extract_features(image: np.ndarray, store: ParamStore, view_index: int = 0) -> FeatureMap:
    """RGB image (3, H, W) in [0, 1] -> conv features (C_f, H/4, W/4).

    Two stride-2 stages with zero padding (ceil division on odd sizes),
    each followed by two reflect-padded residual blocks.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f"expected an RGB (3, H, W) image, got {image.shape}")
    x = kernels.gelu(
        kernels.conv2d(image, store.get(f"{PREFIX}.cf.stem1.w"), store.get(f"{PREFIX}.cf.stem1.b"),
                       stride=2, padding="zero")
    )
    x = _residual_block(x, store, f"{PREFIX}.cf.s1r1")
    x = _residual_block(x, store, f"{PREFIX}.cf.s1r2")
    x = kernels.gelu(
        kernels.conv2d(x, store.get(f"{PREFIX}.cf.stem2.w"), store.get(f"{PREFIX}.cf.stem2.b"),
                       stride=2, padding="zero")
    )
    x = _residual_block(x, store, f"{PREFIX}.cf.s2r1")
    x = _residual_block(x, store, f"{PREFIX}.cf.s2r2")
    return FeatureMap(x, role=ROLE_IMAGE, view_index=view_index)


def _attend(q_map, kv_map, store, name, window, heads):
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


def cross_view_attend(
    features: Sequence[FeatureMap],
    store: ParamStore,
    blocks: int,
    window: int,
    heads: int,
) -> List[FeatureMap]:
    """Interleaved self / cross window attention over all views.

    Each block applies, per view, pre-norm self attention with a residual
    add, then pre-norm cross attention against every other view with the
    results averaged (ascending view order) and added back. With a single
    view the cross step is skipped and only self attention runs.
    """
    if len(features) < 1:
        raise TooFewViews("cross_view_attend needs at least one view")
    shape = features[0].data.shape
    for f in features:
        if f.data.shape != shape:
            raise ShapeMismatch("all views must share one feature shape")
    xs = [f.data.copy() for f in features]
    k = len(xs)
    for b in range(blocks):
        base = f"{PREFIX}.attn.b{b}"
        ln_s = (store.get(f"{base}.self.ln.g"), store.get(f"{base}.self.ln.b"))
        xs = [
            x + _attend(kernels.layer_norm(x, *ln_s), kernels.layer_norm(x, *ln_s),
                        store, f"{base}.self", window, heads)
            for x in xs
        ]
        if k == 1:
            continue
        ln_q = (store.get(f"{base}.cross.lnq.g"), store.get(f"{base}.cross.lnq.b"))
        ln_kv = (store.get(f"{base}.cross.lnkv.g"), store.get(f"{base}.cross.lnkv.b"))
        normed_q = [kernels.layer_norm(x, *ln_q) for x in xs]
        normed_kv = [kernels.layer_norm(x, *ln_kv) for x in xs]
        updated = []
        for i in range(k):
            acc = np.zeros_like(xs[i])
            for j in range(k):
                if j == i:
                    continue
                acc += _attend(normed_q[i], normed_kv[j], store, f"{base}.cross", window, heads)
            updated.append(xs[i] + acc / (k - 1))
        xs = updated
    return [
        FeatureMap(x, role=ROLE_CROSS_VIEW, view_index=f.view_index)
        for x, f in zip(xs, features)
    ]
