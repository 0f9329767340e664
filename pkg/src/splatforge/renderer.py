"""Differentiable forward rasterizer for 3-D gaussians.

Projection follows the EWA splatting recipe: each gaussian's world
covariance R diag(s^2) R^T is pushed through the camera rotation and the
perspective Jacobian at its center, then floored with +0.3 I in pixel
space. Compositing is front to back over a single global depth sort
(stable, index tie-break) with per-pixel weights

    w = clip(alpha * exp(-0.5 * d^T Sigma2d^-1 d), 0, 0.99)

skipping weights below alpha_min and pixels whose transmittance already
fell below transmittance_min, finishing with the background times the
remaining transmittance. Everything is sequential float64 numpy, so the
output is bit-identical across runs and caller thread counts.

rasterize_backward returns analytic gradients of a scalar loss wrt every
gaussian parameter; the clip at 0.99 and the color clamp at [0, 1] have
zero gradient on their flat sides, and culled or skipped gaussians get
zero gradient, matching what central differences see away from those
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import BehindCamera, InvalidRange, ShapeMismatch
from .gaussians import GaussianSet, SH_C1, quaternion_to_matrix, sh_basis, normalize_quaternions
from .geometry import CameraParams

_MIN_DEPTH = 1e-9
_COV_FLOOR = 0.3


@dataclass
class RenderConfig:
    """Rasterization knobs. ``tile`` is advisory only; the composited
    output is independent of any tiling of the image plane."""

    width: int
    height: int
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tile: int = 16
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    radius_sigma: float = 3.0

    def __post_init__(self) -> None:
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width < 1 or self.height < 1:
            raise InvalidRange(f"bad render size {self.width}x{self.height}")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.background)):
            raise InvalidRange("background color must be finite")
        if not (0.0 < self.alpha_min < 1.0):
            raise InvalidRange(f"alpha_min must be in (0, 1), got {self.alpha_min}")
        if not (0.0 < self.transmittance_min < 1.0):
            raise InvalidRange(f"transmittance_min must be in (0, 1), got {self.transmittance_min}")
        if not self.radius_sigma > 0.0:
            raise InvalidRange(f"radius_sigma must be positive, got {self.radius_sigma}")
        if self.tile < 1:
            raise InvalidRange(f"tile must be >= 1, got {self.tile}")


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray  # (H, W) accumulated opacity, 1 - T_final
    count: np.ndarray  # (H, W) int32, gaussians that contributed


def project_gaussian(
    center: np.ndarray, rotation: np.ndarray, scale: np.ndarray, cam: CameraParams
) -> Tuple[np.ndarray, np.ndarray, float]:
    """One gaussian -> (mean2d, 2x2 pixel covariance, camera depth).

    Raises BehindCamera when the center depth is <= 1e-9.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    p_cam = cam.rotation @ center + cam.translation
    z = p_cam[2]
    if not z > _MIN_DEPTH:
        raise BehindCamera(f"gaussian at camera depth {z:.3g}")
    mean2d = np.array(
        [cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy], dtype=np.float64
    )
    jac = _perspective_jacobian(p_cam, cam)
    rot = quaternion_to_matrix(np.asarray(rotation, dtype=np.float64))
    s = np.asarray(scale, dtype=np.float64).reshape(3)
    cov3d = rot @ np.diag(s * s) @ rot.T
    m = jac @ cam.rotation
    cov2d = m @ cov3d @ m.T + _COV_FLOOR * np.eye(2)
    return mean2d, cov2d, float(z)


def _perspective_jacobian(p_cam: np.ndarray, cam: CameraParams) -> np.ndarray:
    x, y, z = p_cam
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )


class _Splat:
    """Per-gaussian projection state reused by forward and backward."""

    __slots__ = (
        "index", "p_cam", "mean2d", "jac", "m", "cov3d", "cov2d", "inv", "depth",
        "rot_q", "rot_m", "scale", "alpha", "view_dir", "view_norm", "color",
        "unclamped", "basis", "bbox",
        "w", "gval", "active", "clipped", "t_before",
    )


def _prepare_splats(gs: GaussianSet, cam: CameraParams, cfg: RenderConfig) -> List[_Splat]:
    """Project, cull, clip bboxes, and depth-sort (stable by index)."""
    if gs.count and gs.sh.shape[2] not in (1, 4):
        raise ShapeMismatch(f"renderer supports 1 or 4 SH bands, got {gs.sh.shape[2]}")
    cam_center = cam.camera_center()
    quats = normalize_quaternions(gs.rotations)
    splats: List[_Splat] = []
    for i in range(gs.count):
        p_cam = cam.rotation @ gs.centers[i] + cam.translation
        z = p_cam[2]
        if not z > _MIN_DEPTH:
            continue
        sp = _Splat()
        sp.index = i
        sp.p_cam = p_cam
        sp.depth = float(z)
        sp.mean2d = np.array(
            [cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy]
        )
        sp.jac = _perspective_jacobian(p_cam, cam)
        sp.rot_q = quats[i]
        sp.rot_m = quaternion_to_matrix(quats[i])
        sp.scale = gs.scales[i]
        sp.cov3d = sp.rot_m @ np.diag(sp.scale * sp.scale) @ sp.rot_m.T
        sp.m = sp.jac @ cam.rotation
        cov2d = sp.m @ sp.cov3d @ sp.m.T + _COV_FLOOR * np.eye(2)
        sp.cov2d = cov2d
        a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
        det = a * c - b * b
        if det <= 0.0:
            continue
        sp.inv = np.array([[c, -b], [-b, a]]) / det
        lam_max = 0.5 * (a + c) + np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
        radius = cfg.radius_sigma * np.sqrt(lam_max)
        x0 = max(int(np.ceil(sp.mean2d[0] - radius)), 0)
        x1 = min(int(np.floor(sp.mean2d[0] + radius)), cfg.width - 1)
        y0 = max(int(np.ceil(sp.mean2d[1] - radius)), 0)
        y1 = min(int(np.floor(sp.mean2d[1] + radius)), cfg.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        sp.bbox = (y0, y1, x0, x1)
        sp.alpha = float(gs.opacities[i])
        diff = gs.centers[i] - cam_center
        norm = np.linalg.norm(diff)
        sp.view_norm = norm
        sp.view_dir = diff / norm if norm > 1e-12 else np.array([0.0, 0.0, 1.0])
        sp.basis = sh_basis(sp.view_dir, gs.sh.shape[2])
        raw = 0.5 + gs.sh[i] @ sp.basis
        sp.color = np.clip(raw, 0.0, 1.0)
        sp.unclamped = (raw > 0.0) & (raw < 1.0)
        splats.append(sp)
    depths = np.array([sp.depth for sp in splats])
    order = np.argsort(depths, kind="stable")
    return [splats[k] for k in order]


def _composite(
    splats: List[_Splat], cfg: RenderConfig, keep_state: bool
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = cfg.height, cfg.width
    trans = np.ones((h, w), dtype=np.float64)
    image = np.zeros((h, w, 3), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int32)
    for sp in splats:
        y0, y1, x0, x1 = sp.bbox
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        dx = xs[None, :] - sp.mean2d[0]
        dy = ys[:, None] - sp.mean2d[1]
        quad = (
            sp.inv[0, 0] * dx * dx + 2.0 * sp.inv[0, 1] * dx * dy + sp.inv[1, 1] * dy * dy
        )
        gval = np.exp(-0.5 * quad)
        w_raw = sp.alpha * gval
        clipped = w_raw > 0.99
        weight = np.minimum(w_raw, 0.99)
        sub_t = trans[y0 : y1 + 1, x0 : x1 + 1]
        active = (weight >= cfg.alpha_min) & (sub_t >= cfg.transmittance_min)
        weight = np.where(active, weight, 0.0)
        contrib = sub_t * weight
        image[y0 : y1 + 1, x0 : x1 + 1] += contrib[:, :, None] * sp.color
        count[y0 : y1 + 1, x0 : x1 + 1] += active
        if keep_state:
            sp.w = weight
            sp.gval = gval
            sp.active = active
            sp.clipped = clipped
            sp.t_before = sub_t.copy()
        trans[y0 : y1 + 1, x0 : x1 + 1] = sub_t * (1.0 - weight)
    image += trans[:, :, None] * cfg.background
    return image, trans, count


def rasterize(gs: GaussianSet, cam: CameraParams, cfg: RenderConfig) -> RenderOutput:
    """Render a gaussian set. An empty or fully culled set returns the
    background with zero accumulated alpha."""
    splats = _prepare_splats(gs, cam, cfg)
    image, trans, count = _composite(splats, cfg, keep_state=False)
    return RenderOutput(image=image, alpha=1.0 - trans, count=count)


def rasterize_backward(
    gs: GaussianSet,
    cam: CameraParams,
    cfg: RenderConfig,
    d_image: np.ndarray,
) -> Dict[str, np.ndarray]:
    """Analytic gradients of sum(d_image * image) wrt gaussian parameters.

    d_image is (H, W, 3), the loss gradient at each output pixel. Returns
    arrays keyed 'centers', 'opacities', 'rotations', 'scales', 'sh' with
    the same shapes as the corresponding GaussianSet fields.
    """
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != (cfg.height, cfg.width, 3):
        raise ShapeMismatch(f"d_image must be (H, W, 3) = {(cfg.height, cfg.width, 3)}, got {d_image.shape}")
    splats = _prepare_splats(gs, cam, cfg)
    _, trans, _ = _composite(splats, cfg, keep_state=True)

    grads = {
        "centers": np.zeros_like(gs.centers),
        "opacities": np.zeros_like(gs.opacities),
        "rotations": np.zeros_like(gs.rotations),
        "scales": np.zeros_like(gs.scales),
        "sh": np.zeros_like(gs.sh),
    }

    # color accumulated behind the current gaussian, per pixel
    behind = trans[:, :, None] * cfg.background

    for sp in reversed(splats):
        y0, y1, x0, x1 = sp.bbox
        sub_d = d_image[y0 : y1 + 1, x0 : x1 + 1]
        sub_s = behind[y0 : y1 + 1, x0 : x1 + 1]
        t_i = sp.t_before
        weight = sp.w
        active = sp.active
        if active.any():
            # d loss / d color, channel by channel
            coef = weight * t_i
            d_color = np.einsum("yx,yxc->c", coef, sub_d)
            # d loss / d weight at each active pixel
            resid = t_i[:, :, None] * sp.color[None, None, :] - sub_s / (1.0 - weight)[:, :, None]
            d_w = np.where(active, np.einsum("yxc,yxc->yx", sub_d, resid), 0.0)
            # update the behind-color for gaussians in front
            sub_s += coef[:, :, None] * sp.color[None, None, :]

            # opacity and gaussian-value chain (clip kills the gradient)
            live = active & ~sp.clipped
            d_w_live = np.where(live, d_w, 0.0)
            grads["opacities"][sp.index] += np.sum(d_w_live * sp.gval)
            d_g = d_w_live * sp.alpha
            d_q = -0.5 * sp.gval * d_g

            xs = np.arange(x0, x1 + 1, dtype=np.float64)
            ys = np.arange(y0, y1 + 1, dtype=np.float64)
            dx = xs[None, :] - sp.mean2d[0]
            dy = ys[:, None] - sp.mean2d[1]
            a00, a01, a11 = sp.inv[0, 0], sp.inv[0, 1], sp.inv[1, 1]
            # q = a00 dx^2 + 2 a01 dx dy + a11 dy^2
            d_dx = d_q * 2.0 * (a00 * dx + a01 * dy)
            d_dy = d_q * 2.0 * (a01 * dx + a11 * dy)
            d_mean = np.array([-np.sum(d_dx), -np.sum(d_dy)])
            g_a00 = np.sum(d_q * dx * dx)
            g_a01 = np.sum(d_q * 2.0 * dx * dy)
            g_a11 = np.sum(d_q * dy * dy)

            # A = cov2d^-1: Frobenius gradient wrt cov2d is -A Gm A
            gm = np.array([[g_a00, 0.5 * g_a01], [0.5 * g_a01, g_a11]])
            g_cov2d = -sp.inv @ gm @ sp.inv

            # cov2d = M cov3d M^T + floor
            d_m = 2.0 * g_cov2d @ sp.m @ sp.cov3d
            g_cov3d = sp.m.T @ g_cov2d @ sp.m

            # M = J R_cam
            d_jac = d_m @ cam.rotation.T

            # mean2d and J both depend on the camera-frame center
            x, y, z = sp.p_cam
            fx, fy = cam.fx, cam.fy
            d_pcam = sp.jac.T @ d_mean
            d_pcam[0] += d_jac[0, 2] * (-fx / (z * z))
            d_pcam[1] += d_jac[1, 2] * (-fy / (z * z))
            d_pcam[2] += (
                d_jac[0, 0] * (-fx / (z * z))
                + d_jac[0, 2] * (2.0 * fx * x / (z * z * z))
                + d_jac[1, 1] * (-fy / (z * z))
                + d_jac[1, 2] * (2.0 * fy * y / (z * z * z))
            )
            d_center = cam.rotation.T @ d_pcam

            # cov3d = R diag(s^2) R^T
            rtgr = sp.rot_m.T @ g_cov3d @ sp.rot_m
            grads["scales"][sp.index] += 2.0 * sp.scale * np.diag(rtgr)
            d_rot = 2.0 * g_cov3d @ sp.rot_m @ np.diag(sp.scale * sp.scale)
            d_quat_unit = _quat_backward(sp.rot_q, d_rot)
            # normalization projection at the unit point
            grads["rotations"][sp.index] += d_quat_unit - sp.rot_q * np.dot(
                sp.rot_q, d_quat_unit
            )

            # color: SH coefficients and the view-direction path
            ch_mask = sp.unclamped.astype(np.float64)
            d_color_open = d_color * ch_mask
            grads["sh"][sp.index] += d_color_open[:, None] * sp.basis[None, :]
            if gs.sh.shape[2] == 4:
                k = gs.sh[sp.index]
                d_v = np.array(
                    [
                        -SH_C1 * np.sum(d_color_open * k[:, 3]),
                        -SH_C1 * np.sum(d_color_open * k[:, 1]),
                        SH_C1 * np.sum(d_color_open * k[:, 2]),
                    ]
                )
                v = sp.view_dir
                d_center += (d_v - v * np.dot(v, d_v)) / sp.view_norm

            grads["centers"][sp.index] += d_center
        else:
            # still advance the behind-color bookkeeping (no-op: weight == 0)
            pass

    return grads


def _quat_backward(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """<dL/dR, dR/dq> for a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    dw = 2.0 * (
        d_rot[0, 1] * (-z) + d_rot[0, 2] * y
        + d_rot[1, 0] * z + d_rot[1, 2] * (-x)
        + d_rot[2, 0] * (-y) + d_rot[2, 1] * x
    )
    dx = 2.0 * (
        d_rot[0, 1] * y + d_rot[0, 2] * z
        + d_rot[1, 0] * y + d_rot[1, 1] * (-2.0 * x) + d_rot[1, 2] * (-w)
        + d_rot[2, 0] * z + d_rot[2, 1] * w + d_rot[2, 2] * (-2.0 * x)
    )
    dy = 2.0 * (
        d_rot[0, 0] * (-2.0 * y) + d_rot[0, 1] * x + d_rot[0, 2] * w
        + d_rot[1, 0] * x + d_rot[1, 2] * z
        + d_rot[2, 0] * (-w) + d_rot[2, 1] * z + d_rot[2, 2] * (-2.0 * y)
    )
    dz = 2.0 * (
        d_rot[0, 0] * (-2.0 * z) + d_rot[0, 1] * (-w) + d_rot[0, 2] * x
        + d_rot[1, 0] * w + d_rot[1, 1] * (-2.0 * z) + d_rot[1, 2] * y
        + d_rot[2, 0] * x + d_rot[2, 1] * y
    )
    return np.array([dw, dx, dy, dz])
