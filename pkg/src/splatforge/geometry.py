"""Pinhole cameras, projection, unprojection, and plane-sweep warps.

Conventions (fixed across the package):
  * world -> camera: x_cam = R @ p + t. R is row-major orthonormal with
    det +1; the camera center in world space is -R^T @ t.
  * pixel = (fx * x / z + cx, fy * y / z + cy); +z looks forward.
  * pixel centers sit at integer coordinates, so pixel (0, 0) is the
    exact center of the top-left pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidRange, NonPositiveDepth, ShapeMismatch

_MIN_DEPTH = 1e-9
_ROT_TOL = 1e-9


@dataclass
class CameraParams:
    """Intrinsics, world-to-camera pose, and the usable depth range."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    near: float
    far: float

    def __post_init__(self) -> None:
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.near = float(self.near)
        self.far = float(self.far)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise InvalidRange(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 < self.near < self.far):
            raise InvalidRange(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise InvalidRange("camera pose contains non-finite values")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise InvalidRange(f"rotation is not orthonormal (max deviation {err:.3g})")
        if np.linalg.det(self.rotation) < 0.0:
            raise InvalidRange("rotation has negative determinant")

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def scaled(self, factor: float) -> "CameraParams":
        """Same pose, intrinsics multiplied by ``factor`` (feature-grid cams)."""
        return CameraParams(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            rotation=self.rotation.copy(),
            translation=self.translation.copy(),
            near=self.near,
            far=self.far,
        )


@dataclass
class DepthMap:
    """Positive finite per-pixel depths for one view."""

    values: np.ndarray
    view_index: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"depth map must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidRange("depth map contains non-finite values")
        if not np.all(self.values > 0.0):
            raise InvalidRange("depth map contains non-positive depths")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def project_point(p: np.ndarray, cam: CameraParams) -> Tuple[np.ndarray, float]:
    """World point -> (pixel, camera-frame depth).

    Raises NonPositiveDepth when the point sits at or behind the camera
    plane (z <= 1e-9).
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    x_cam = cam.rotation @ p + cam.translation
    z = x_cam[2]
    if not z > _MIN_DEPTH:
        raise NonPositiveDepth(f"point projects to depth {z:.3g}")
    pixel = np.array(
        [cam.fx * x_cam[0] / z + cam.cx, cam.fy * x_cam[1] / z + cam.cy], dtype=np.float64
    )
    return pixel, float(z)


def unproject_pixel(pixel: np.ndarray, depth: float, cam: CameraParams) -> np.ndarray:
    """Pixel + depth -> world point. Exact inverse of project_point."""
    if not depth > 0.0:
        raise NonPositiveDepth(f"cannot unproject at depth {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    x_cam = np.array(
        [(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth], dtype=np.float64
    )
    return cam.rotation.T @ (x_cam - cam.translation)


def sweep_warp(
    pixel: np.ndarray,
    depth: float,
    ref_cam: CameraParams,
    src_cam: CameraParams,
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> Tuple[np.ndarray, bool]:
    """Reproject a reference pixel at a hypothesis depth into a source view.

    Returns (source pixel, valid). valid is False when the warped point
    lands behind the source camera or, if width/height are given, when
    it falls outside [0, W) x [0, H).
    """
    world = unproject_pixel(pixel, depth, ref_cam)
    x_cam = src_cam.rotation @ world + src_cam.translation
    z = x_cam[2]
    if not z > _MIN_DEPTH:
        return np.array([np.nan, np.nan]), False
    sp = np.array(
        [src_cam.fx * x_cam[0] / z + src_cam.cx, src_cam.fy * x_cam[1] / z + src_cam.cy],
        dtype=np.float64,
    )
    valid = True
    if width is not None and height is not None:
        valid = bool(0.0 <= sp[0] < width and 0.0 <= sp[1] < height)
    return sp, valid


def warp_grid(
    h: int,
    w: int,
    depth: float,
    ref_cam: CameraParams,
    src_cam: CameraParams,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sweep_warp over a full h x w reference grid.

    Returns (xs, ys, zs) arrays of shape (h, w): source pixel coordinates
    and source-frame depths. Callers decide their own bounds policy; zs
    <= 0 marks points behind the source camera (xs/ys are then garbage).
    """
    ys, xs = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    # unproject the whole grid in the reference frame
    xc = (xs - ref_cam.cx) / ref_cam.fx * depth
    yc = (ys - ref_cam.cy) / ref_cam.fy * depth
    zc = np.full_like(xc, depth)
    cam_pts = np.stack([xc, yc, zc], axis=0).reshape(3, -1)
    world = ref_cam.rotation.T @ (cam_pts - ref_cam.translation[:, None])
    src = src_cam.rotation @ world + src_cam.translation[:, None]
    z = src[2].reshape(h, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (src_cam.fx * src[0] / src[2]).reshape(h, w) + src_cam.cx
        v = (src_cam.fy * src[1] / src[2]).reshape(h, w) + src_cam.cy
    return u, v, z
