"""PNG / PPM image reading and writing.

Float images live in [0, 1]; quantization to 8 bits multiplies by 255
and rounds half to even. Depth visualizations are written as 16-bit
grayscale PNGs normalized to a given [near, far] range.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptFile, MissingFile, ShapeMismatch


def quantize_u8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """(H, W, 3) floats in [0, 1] -> 8-bit RGB PNG."""
    arr = quantize_u8(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3), got {np.shape(img)}")
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6 PPM with the same quantization as write_png."""
    arr = quantize_u8(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3), got {np.shape(img)}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes(order="C"))


def write_png_gray(path, img: np.ndarray) -> None:
    """(H, W) floats in [0, 1] -> 8-bit grayscale PNG."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatch(f"expected (H, W), got {img.shape}")
    arr = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(str(path), format="PNG")


def write_depth_png16(path, depth: np.ndarray, near: float, far: float) -> None:
    """Depth map -> 16-bit grayscale, near maps to 0 and far to 65535."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeMismatch(f"expected (H, W) depth, got {depth.shape}")
    span = max(far - near, 1e-12)
    norm = np.clip((depth - near) / span, 0.0, 1.0)
    arr = np.rint(norm * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(str(path), format="PNG")


def read_image(path) -> np.ndarray:
    """Load a PNG or PPM as (H, W, 3) float64 in [0, 1]."""
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such image: {path}")
    try:
        with Image.open(str(p)) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise CorruptFile(f"cannot decode image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0
