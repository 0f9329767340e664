"""Naive reference implementations used to check the real kernels.

Everything here favors obviousness over speed: explicit loops, dense
matrices, no shared code with the package beyond numpy. Padding
conventions are restated independently so a bug in the package's
padding helper cannot hide.
"""

import math

import numpy as np


def softmax_oracle(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def gelu_oracle(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def mlp_oracle(v, w1, b1, w2, b2):
    hidden = w1 @ v + b1
    hidden = np.array([gelu_oracle(h) for h in hidden])
    return w2 @ hidden + b2


def layer_norm_oracle(x, gamma, beta, eps=1e-5):
    """Per spatial position, normalize across channels."""
    c, h, w = x.shape
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            col = x[:, i, j]
            mu = col.mean()
            var = ((col - mu) ** 2).mean()
            out[:, i, j] = gamma * (col - mu) / math.sqrt(var + eps) + beta
    return out


def _same_pad_1d(size, k, stride):
    out = math.ceil(size / stride)
    total = max(0, (out - 1) * stride + k - size)
    left = total // 2
    return left, total - left, out


def _pad_image(x, py, px, mode):
    if mode == "zero":
        return np.pad(x, ((0, 0), py, px), mode="constant")
    return np.pad(x, ((0, 0), py, px), mode="reflect")


def conv2d_oracle(x, weight, bias=None, stride=1, padding="reflect"):
    """Six nested loops over output channel, output position, input
    channel, and the kernel taps."""
    c_out, c_in, k, _ = weight.shape
    _, h, w = x.shape
    py = _same_pad_1d(h, k, stride)
    px = _same_pad_1d(w, k, stride)
    xp = _pad_image(x, py[:2], px[:2], padding)
    out = np.zeros((c_out, py[2], px[2]), dtype=np.float64)
    for oc in range(c_out):
        for oy in range(py[2]):
            for ox in range(px[2]):
                acc = 0.0
                for ic in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            acc += weight[oc, ic, ky, kx] * xp[ic, oy * stride + ky, ox * stride + kx]
                out[oc, oy, ox] = acc + (bias[oc] if bias is not None else 0.0)
    return out


def depthwise_oracle(x, weight, bias=None, dilation=1, padding="reflect"):
    c, k, _ = weight.shape
    _, h, w = x.shape
    span = (k - 1) * dilation + 1
    pad = (span - 1) // 2
    xp = _pad_image(x, (pad, pad), (pad, pad), padding)
    out = np.zeros((c, h, w), dtype=np.float64)
    for ch in range(c):
        for oy in range(h):
            for ox in range(w):
                acc = 0.0
                for ky in range(k):
                    for kx in range(k):
                        acc += weight[ch, ky, kx] * xp[ch, oy + ky * dilation, ox + kx * dilation]
                out[ch, oy, ox] = acc + (bias[ch] if bias is not None else 0.0)
    return out


def bilinear_resize_oracle(x, out_h, out_w):
    """Align-corners-false, per output pixel, edge clamped."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = x[ch, y0, x0] * (1 - fx) + x[ch, y0, x1] * fx
                bot = x[ch, y1, x0] * (1 - fx) + x[ch, y1, x1] * fx
                out[ch, oy, ox] = top * (1 - fy) + bot * fy
    return out


def bilinear_sample_oracle(x, xs, ys):
    c, h, w = x.shape
    flat_x = np.asarray(xs, dtype=np.float64).reshape(-1)
    flat_y = np.asarray(ys, dtype=np.float64).reshape(-1)
    out = np.zeros((c, flat_x.size), dtype=np.float64)
    for p in range(flat_x.size):
        sx = min(max(flat_x[p], 0.0), w - 1.0)
        sy = min(max(flat_y[p], 0.0), h - 1.0)
        x0 = min(int(math.floor(sx)), w - 1)
        y0 = min(int(math.floor(sy)), h - 1)
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = sx - x0
        fy = sy - y0
        for ch in range(c):
            top = x[ch, y0, x0] * (1 - fx) + x[ch, y0, x1] * fx
            bot = x[ch, y1, x0] * (1 - fx) + x[ch, y1, x1] * fx
            out[ch, p] = top * (1 - fy) + bot * fy
    return out.reshape((c,) + np.asarray(xs).shape)


def window_attention_oracle(q_src, kv_src, wq, bq, wk, bk, wv, bv, window, heads):
    """Dense per-window QK^T softmax V with explicit loops over windows
    and heads. Projection first, then zero padding to window multiples,
    then attention, then crop — padded positions act as zero keys/values.
    """
    c, h, w = q_src.shape
    head_dim = c // heads

    def project(src, wgt, b):
        wgt = wgt[:, :, 0, 0] if wgt.ndim == 4 else wgt
        out = np.zeros((wgt.shape[0], h, w))
        for i in range(h):
            for j in range(w):
                out[:, i, j] = wgt @ src[:, i, j] + b
        return out

    q = project(q_src, wq, bq)
    k = project(kv_src, wk, bk)
    v = project(kv_src, wv, bv)
    hp = math.ceil(h / window) * window
    wp = math.ceil(w / window) * window
    qp = np.zeros((c, hp, wp)); qp[:, :h, :w] = q
    kp = np.zeros((c, hp, wp)); kp[:, :h, :w] = k
    vp = np.zeros((c, hp, wp)); vp[:, :h, :w] = v

    out = np.zeros((c, hp, wp))
    for wy in range(hp // window):
        for wx in range(wp // window):
            ys = slice(wy * window, (wy + 1) * window)
            xs = slice(wx * window, (wx + 1) * window)
            for hd in range(heads):
                cs = slice(hd * head_dim, (hd + 1) * head_dim)
                qt = qp[cs, ys, xs].reshape(head_dim, -1).T  # (t, d)
                kt = kp[cs, ys, xs].reshape(head_dim, -1).T
                vt = vp[cs, ys, xs].reshape(head_dim, -1).T
                scores = qt @ kt.T / math.sqrt(head_dim)
                attn = np.stack([softmax_oracle(row) for row in scores])
                res = attn @ vt  # (t, d)
                out[cs, ys, xs] = res.T.reshape(head_dim, window, window)
    return out[:, :h, :w]


def project_point_oracle(p, cam):
    """Homogeneous 3x4 matrix multiply then divide."""
    kmat = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1.0]])
    ext = np.hstack([cam.rotation, cam.translation.reshape(3, 1)])
    hom = kmat @ ext @ np.array([p[0], p[1], p[2], 1.0])
    return np.array([hom[0] / hom[2], hom[1] / hom[2]]), hom[2]


def unproject_oracle(u, v, d, cam):
    kinv = np.linalg.inv(
        np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1.0]])
    )
    p_cam = kinv @ np.array([u, v, 1.0]) * d
    return cam.rotation.T @ (p_cam - cam.translation)


def mse_oracle(a, b):
    total = 0.0
    n = 0
    flat_a = np.asarray(a).reshape(-1)
    flat_b = np.asarray(b).reshape(-1)
    for x, y in zip(flat_a, flat_b):
        total += (x - y) ** 2
        n += 1
    return total / n


def composite_pixel_oracle(weights, colors, background):
    """Scalar front-to-back compositing for one pixel, one channel."""
    t = 1.0
    c = 0.0
    for wi, ci in zip(weights, colors):
        c += t * wi * ci
        t *= 1.0 - wi
    return c + t * background
