"""Deterministic numeric building blocks.

Everything here operates on plain float64 numpy arrays in channels x
height x width layout and reduces in a fixed order, so repeated calls
with the same inputs are bit identical regardless of how many worker
threads the caller spins up around them.

Conventions:
  * conv2d is cross-correlation (no kernel flip), odd square kernels,
    stride 1 or 2, output spatial size ceil(in / stride). Stride-2 pads
    asymmetrically (left = total // 2) like "same" padding.
  * bilinear_resize / bilinear_sample use the align-corners-false
    mapping src = (dst + 0.5) * (in / out) - 0.5 with edge clamping.
  * window_attention partitions into non-overlapping square windows,
    scales scores by 1 / sqrt(head_dim), and uses no positional bias.
    Inputs are projected first, then zero-padded to window multiples
    and cropped afterwards; it returns the attention-weighted values
    (callers add their own output mixing if they want it).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh-approximation GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax; exact ties split evenly."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def mlp(v: np.ndarray, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Two affine layers with a GELU between, on the last axis."""
    v = np.asarray(v, dtype=np.float64)
    h = gelu(v @ w1.T + b1)
    return h @ w2.T + b2


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the channel axis of a (C, H, W) map, per position."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"layer_norm expects (C, H, W), got {x.shape}")
    mu = np.mean(x, axis=0, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=0, keepdims=True)
    norm = (x - mu) / np.sqrt(var + eps)
    return norm * gamma[:, None, None] + beta[:, None, None]


# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------


def _pad_amounts(size: int, k: int, stride: int) -> tuple:
    out = -(-size // stride)  # ceil
    total = max(0, (out - 1) * stride + k - size)
    left = total // 2
    return left, total - left


def _pad_spatial(x: np.ndarray, py: tuple, px: tuple, mode: str) -> np.ndarray:
    if mode == "zero":
        return np.pad(x, ((0, 0), py, px), mode="constant")
    if mode == "reflect":
        if x.shape[1] <= max(py) or x.shape[2] <= max(px):
            raise ShapeMismatch(
                f"reflect padding {py}/{px} needs spatial dims larger than the pad, got {x.shape}"
            )
        return np.pad(x, ((0, 0), py, px), mode="reflect")
    raise ShapeMismatch(f"unknown padding mode {mode!r}")


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: str = "reflect",
) -> np.ndarray:
    """Dense 2-D cross-correlation.

    Args:
        x: (C_in, H, W).
        weight: (C_out, C_in, k, k) with k odd.
        bias: (C_out,) or None.
        stride: 1 or 2; output spatial dims are ceil(in / stride).
        padding: "reflect" or "zero".
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d got x {x.shape}, weight {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 != 1:
        raise ShapeMismatch(f"conv2d kernels must be odd squares, got {kh}x{kw}")
    if c_in != x.shape[0]:
        raise ShapeMismatch(f"conv2d channel mismatch: x has {x.shape[0]}, weight expects {c_in}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"conv2d stride must be 1 or 2, got {stride}")

    k = kh
    _, h, w = x.shape
    py = _pad_amounts(h, k, stride)
    px = _pad_amounts(w, k, stride)
    xp = _pad_spatial(x, py, px, padding)

    out_h = -(-h // stride)
    out_w = -(-w // stride)
    # im2col: windows laid out as (C_in * k * k, out_h * out_w)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride, :, :]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, out_h * out_w)
    out = weight.reshape(c_out, c_in * k * k) @ cols
    out = out.reshape(c_out, out_h, out_w)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def depthwise_conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    dilation: int = 1,
    padding: str = "reflect",
) -> np.ndarray:
    """Per-channel 2-D cross-correlation with optional dilation, stride 1.

    weight is (C, k, k); output spatial dims match the input.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"depthwise_conv2d got x {x.shape}, weight {weight.shape}")
    c, kh, kw = weight.shape
    if kh != kw or kh % 2 != 1:
        raise ShapeMismatch(f"depthwise kernels must be odd squares, got {kh}x{kw}")
    if dilation < 1:
        raise ShapeMismatch(f"dilation must be >= 1, got {dilation}")

    k = kh
    span = (k - 1) * dilation + 1  # effective kernel extent
    pad = (span - 1) // 2
    xp = _pad_spatial(x, (pad, pad), (pad, pad), padding)
    _, h, w = x.shape
    out = np.zeros((c, h, w), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy * dilation : dy * dilation + h, dx * dilation : dx * dilation + w]
            out += weight[:, dy, dx][:, None, None] * patch
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Pointwise channel mixing; weight is (C_out, C_in) or (C_out, C_in, 1, 1)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim == 4:
        weight = weight[:, :, 0, 0]
    c, h, w = x.shape
    out = (weight @ x.reshape(c, h * w)).reshape(weight.shape[0], h, w)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def _resize_axis_coords(out_size: int, in_size: int):
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize, align-corners-false, edge clamped."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"bilinear_resize expects (C, H, W), got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"bad target size {out_h}x{out_w}")
    c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    ylo, yhi, fy = _resize_axis_coords(out_h, h)
    xlo, xhi, fx = _resize_axis_coords(out_w, w)
    rows = x[:, ylo, :] * (1.0 - fy)[None, :, None] + x[:, yhi, :] * fy[None, :, None]
    out = rows[:, :, xlo] * (1.0 - fx)[None, None, :] + rows[:, :, xhi] * fx[None, None, :]
    return out


def bilinear_sample(x: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample a (C, H, W) map at continuous pixel positions, edge clamped.

    xs/ys may have any matching shape; the result is (C,) + that shape.
    """
    x = np.asarray(x, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ShapeMismatch(f"coordinate shapes differ: {xs.shape} vs {ys.shape}")
    c, h, w = x.shape
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(cx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(cy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    v00 = x[:, y0, x0]
    v01 = x[:, y0, x1]
    v10 = x[:, y1, x0]
    v11 = x[:, y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def window_attention(
    q_src: np.ndarray,
    kv_src: np.ndarray,
    wq: np.ndarray,
    bq: np.ndarray,
    wk: np.ndarray,
    bk: np.ndarray,
    wv: np.ndarray,
    bv: np.ndarray,
    window: int,
    heads: int,
) -> np.ndarray:
    """Multi-head attention inside non-overlapping square windows.

    Queries come from q_src, keys and values from kv_src (both (C, H, W)
    with identical spatial dims). Scores are scaled by 1/sqrt(head_dim);
    there is no relative position bias and no output projection. Output
    entries are convex combinations of projected values per head.
    """
    q_src = np.asarray(q_src, dtype=np.float64)
    kv_src = np.asarray(kv_src, dtype=np.float64)
    if q_src.shape != kv_src.shape:
        raise ShapeMismatch(f"query/key-value shapes differ: {q_src.shape} vs {kv_src.shape}")
    c, h, w = q_src.shape
    if window < 1:
        raise ShapeMismatch(f"window must be >= 1, got {window}")
    if heads < 1 or c % heads != 0:
        raise ShapeMismatch(f"channels {c} not divisible by heads {heads}")
    head_dim = c // heads

    q = conv1x1(q_src, wq, bq)
    k = conv1x1(kv_src, wk, bk)
    v = conv1x1(kv_src, wv, bv)

    pad_h = (-h) % window
    pad_w = (-w) % window
    if pad_h or pad_w:
        q = np.pad(q, ((0, 0), (0, pad_h), (0, pad_w)))
        k = np.pad(k, ((0, 0), (0, pad_h), (0, pad_w)))
        v = np.pad(v, ((0, 0), (0, pad_h), (0, pad_w)))
    hp, wp = h + pad_h, w + pad_w
    ny, nx = hp // window, wp // window
    t = window * window

    def to_windows(arr):
        # (C, hp, wp) -> (ny*nx, heads, t, head_dim)
        arr = arr.reshape(heads, head_dim, ny, window, nx, window)
        return arr.transpose(2, 4, 0, 3, 5, 1).reshape(ny * nx, heads, t, head_dim)

    qw = to_windows(q)
    kw = to_windows(k)
    vw = to_windows(v)

    scores = np.einsum("bhtd,bhsd->bhts", qw, kw) / math.sqrt(head_dim)
    attn = softmax(scores, axis=-1)
    outw = np.einsum("bhts,bhsd->bhtd", attn, vw)

    out = outw.reshape(ny, nx, heads, window, window, head_dim)
    out = out.transpose(2, 5, 0, 3, 1, 4).reshape(c, hp, wp)
    return out[:, :h, :w]
