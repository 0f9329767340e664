"""Per-pixel gaussian prediction and the GSP1 container.

Every pixel of every input view becomes one gaussian: its center is the
pixel unprojected at the refined depth, opacity comes from matching
confidence, and a shared conv head predicts rotation, scale, and
spherical-harmonics color logits. Weight namespace ``head.``.

GSP1 layout: magic b"GSP1", u32 LE count, then per gaussian little-endian
float32 fields: center xyz (3), opacity (1), rotation quaternion wxyz (4),
scale xyz (3), SH coefficients channel-major (3 * B: all B bands for R,
then G, then B). B is recovered from the record size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import CorruptFile, InvalidRange, MissingFile, ShapeMismatch
from .geometry import CameraParams, DepthMap, unproject_pixel
from .params import BlockSpec, ParamStore, conv_spec
from .tensors import FeatureMap

PREFIX = "head"

_GSP_MAGIC = b"GSP1"

# real spherical harmonics, degree 0 and 1
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

_QUAT_SNAP = 1e-6


def sh_band_count(degree: int) -> int:
    if degree not in (0, 1):
        raise InvalidRange(f"supported SH degrees are 0 and 1, got {degree}")
    return (degree + 1) ** 2


@dataclass
class GaussianSet:
    """Flat arrays over N gaussians; rotations are unit quaternions wxyz."""

    centers: np.ndarray
    opacities: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    sh: np.ndarray  # (N, 3, B)

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = self.centers.shape[0]
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        sh = np.asarray(self.sh, dtype=np.float64)
        # reshape(n, 3, -1) cannot infer the band count of an empty set
        self.sh = sh.reshape(n, 3, -1) if sh.size else sh.reshape(n, 3, 1)
        for name, arr in (
            ("centers", self.centers),
            ("opacities", self.opacities),
            ("rotations", self.rotations),
            ("scales", self.scales),
            ("sh", self.sh),
        ):
            if not np.all(np.isfinite(arr)):
                raise InvalidRange(f"gaussian {name} contain non-finite values")
        if n:
            if not np.all((self.opacities >= 0.0) & (self.opacities <= 1.0)):
                raise InvalidRange("opacities must lie in [0, 1]")
            if not np.all(self.scales > 0.0):
                raise InvalidRange("scales must be positive")
            norms = np.linalg.norm(self.rotations, axis=1)
            # loose enough to admit finite-difference probes of single
            # components; the rasterizer renormalizes before use
            if np.abs(norms - 1.0).max() > 1e-3:
                raise InvalidRange("rotations must be unit quaternions")

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def sh_bands(self) -> int:
        return self.sh.shape[2]

    def covariance(self, i: int) -> np.ndarray:
        """World-space 3x3 covariance R diag(s^2) R^T; symmetric PSD."""
        rot = quaternion_to_matrix(self.rotations[i])
        return rot @ np.diag(self.scales[i] ** 2) @ rot.T

    def save(self, path) -> None:
        n, b = self.count, self.sh_bands
        rec = np.empty((n, 11 + 3 * b), dtype="<f4")
        rec[:, 0:3] = self.centers
        rec[:, 3] = self.opacities
        rec[:, 4:8] = self.rotations
        rec[:, 8:11] = self.scales
        rec[:, 11:] = self.sh.reshape(n, 3 * b)
        with open(path, "wb") as fh:
            fh.write(_GSP_MAGIC)
            fh.write(struct.pack("<I", n))
            fh.write(rec.tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "GaussianSet":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except FileNotFoundError as exc:
            raise MissingFile(f"no such gaussian file: {path}") from exc
        except OSError as exc:
            raise MissingFile(f"cannot read gaussian file {path}: {exc}") from exc
        if len(blob) < 8 or blob[:4] != _GSP_MAGIC:
            raise CorruptFile(f"{path}: not a GSP1 file")
        (n,) = struct.unpack_from("<I", blob, 4)
        body = len(blob) - 8
        if n == 0:
            if body:
                raise CorruptFile(f"{path}: trailing bytes in empty set")
            z = np.zeros((0,))
            return cls(z.reshape(0, 3), z, z.reshape(0, 4), z.reshape(0, 3), z.reshape(0, 3, 1))
        if body % (4 * n) != 0:
            raise CorruptFile(f"{path}: payload is not a whole number of records")
        floats_per = body // (4 * n)
        if floats_per < 14 or (floats_per - 11) % 3 != 0:
            raise CorruptFile(f"{path}: record of {floats_per} floats is not a gaussian")
        b = (floats_per - 11) // 3
        rec = np.frombuffer(blob, dtype="<f4", count=n * floats_per, offset=8)
        rec = rec.reshape(n, floats_per).astype(np.float64)
        return cls(
            rec[:, 0:3], rec[:, 3], rec[:, 4:8], rec[:, 8:11], rec[:, 11:].reshape(n, 3, b)
        )


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def normalize_quaternions(raw: np.ndarray) -> np.ndarray:
    """Row-wise normalize; rows with norm < 1e-6 snap to identity."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 4)
    norms = np.linalg.norm(raw, axis=1)
    out = np.empty_like(raw)
    small = norms < _QUAT_SNAP
    out[small] = np.array([1.0, 0.0, 0.0, 0.0])
    ok = ~small
    out[ok] = raw[ok] / norms[ok, None]
    return out


def sh_to_color(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Evaluate SH color for one gaussian seen from ``view_dir`` (unit).

    coeffs is (3, B) with B in {1, 4}. Degree-0 is offset so zero
    coefficients give mid gray; the result is clamped to [0, 1].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != 3 or coeffs.shape[1] not in (1, 4):
        raise ShapeMismatch(f"expected (3, 1) or (3, 4) SH coefficients, got {coeffs.shape}")
    d = np.asarray(view_dir, dtype=np.float64).reshape(3)
    basis = sh_basis(d, coeffs.shape[1])
    return np.clip(0.5 + coeffs @ basis, 0.0, 1.0)


def sh_basis(view_dir: np.ndarray, bands: int) -> np.ndarray:
    """Basis values [Y0, Y1, Y2, Y3][:bands] at a unit direction."""
    x, y, z = view_dir
    if bands == 1:
        return np.array([SH_C0])
    return np.array([SH_C0, -SH_C1 * y, SH_C1 * z, -SH_C1 * x])


# ---------------------------------------------------------------------------
# prediction heads
# ---------------------------------------------------------------------------


def param_specs(c_f: int, depth_count: int, sh_degree: int, opacity_hidden: int, shape_hidden: int) -> List[BlockSpec]:
    bands = sh_band_count(sh_degree)
    specs: List[BlockSpec] = []
    specs += conv_spec(f"{PREFIX}.opacity.c1", opacity_hidden, 1, 3)
    specs += conv_spec(f"{PREFIX}.opacity.c2", 1, opacity_hidden, 3)
    specs += conv_spec(f"{PREFIX}.shape.c1", shape_hidden, 3 + c_f + depth_count, 3)
    specs += conv_spec(f"{PREFIX}.shape.c2", 4 + 3 + 3 * bands, shape_hidden, 3)
    return specs


def predict_centers(depths: Sequence[DepthMap], cams: Sequence[CameraParams]) -> np.ndarray:
    """Unproject every pixel center of every view at its refined depth.

    Order is view-major then row-major, matching the flattening used by
    the other heads.
    """
    if len(depths) != len(cams):
        raise ShapeMismatch(f"{len(depths)} depth maps vs {len(cams)} cameras")
    chunks = []
    for dm, cam in zip(depths, cams):
        h, w = dm.values.shape
        ys, xs = np.meshgrid(
            np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
        )
        d = dm.values
        xc = (xs - cam.cx) / cam.fx * d
        yc = (ys - cam.cy) / cam.fy * d
        pts_cam = np.stack([xc, yc, d], axis=0).reshape(3, -1)
        world = cam.rotation.T @ (pts_cam - cam.translation[:, None])
        chunks.append(world.T)
    return np.concatenate(chunks, axis=0)


def predict_opacity(confidences: Sequence[np.ndarray], store: ParamStore, image_hw: Tuple[int, int]) -> np.ndarray:
    """Confidence (coarse grid) -> per-pixel opacity in (0, 1), flattened
    view-major. Zero-initialized convs give exactly 0.5 everywhere."""
    h, w = image_hw
    out = []
    for conf in confidences:
        conf = np.asarray(conf, dtype=np.float64)
        up = kernels.bilinear_resize(conf[None, :, :], h, w)
        x = kernels.gelu(
            kernels.conv2d(up, store.get(f"{PREFIX}.opacity.c1.w"), store.get(f"{PREFIX}.opacity.c1.b"))
        )
        x = kernels.conv2d(x, store.get(f"{PREFIX}.opacity.c2.w"), store.get(f"{PREFIX}.opacity.c2.b"))
        out.append(kernels.sigmoid(x[0]).reshape(-1))
    return np.concatenate(out)


def predict_shape_color(
    images: Sequence[np.ndarray],
    conv_feats: Sequence[FeatureMap],
    volumes: Sequence[np.ndarray],
    depths: Sequence[DepthMap],
    cams: Sequence[CameraParams],
    store: ParamStore,
    sh_degree: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared conv head over [image, lifted features, lifted volume].

    Returns (rotations (N,4) unit, scales (N,3) positive, sh (N,3,B)).
    Quaternion logits are normalized with a snap to identity below 1e-6;
    scale logits pass through softplus and are multiplied by the pixel's
    metric footprint depth/fx.
    """
    bands = sh_band_count(sh_degree)
    rots, scales, shs = [], [], []
    for img, cf, vol, dm, cam in zip(images, conv_feats, volumes, depths, cams):
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[1], img.shape[2]
        cf_up = kernels.bilinear_resize(cf.data, h, w)
        vol_up = kernels.bilinear_resize(np.asarray(vol, dtype=np.float64), h, w)
        stacked = np.concatenate([img, cf_up, vol_up], axis=0)
        x = kernels.gelu(
            kernels.conv2d(stacked, store.get(f"{PREFIX}.shape.c1.w"), store.get(f"{PREFIX}.shape.c1.b"))
        )
        x = kernels.conv2d(x, store.get(f"{PREFIX}.shape.c2.w"), store.get(f"{PREFIX}.shape.c2.b"))
        npix = h * w
        quat_logits = x[0:4].reshape(4, npix).T
        scale_logits = x[4:7].reshape(3, npix).T
        sh_logits = x[7 : 7 + 3 * bands].reshape(3, bands, npix).transpose(2, 0, 1)
        rots.append(normalize_quaternions(quat_logits))
        metric = (dm.values.reshape(-1) / cam.fx)[:, None]
        scales.append(kernels.softplus(scale_logits) * metric)
        shs.append(sh_logits)
    return np.concatenate(rots), np.concatenate(scales), np.concatenate(shs)
