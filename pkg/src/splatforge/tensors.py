"""Dense tensor carrier and the TSF1 on-disk format.

TSF1 is the interchange format for every feature map, depth stack, and
weight block this package reads or writes:

    magic   4 bytes  b"TSF1"
    dtype   u8       0 = float32 (the only tag defined)
    ndim    u8
    dims    ndim * u32, little endian
    payload row-major little-endian float32

Arrays are held in float64 in memory; the file payload is float32, so a
load -> save round trip is byte identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile, MissingFile, NumericalFailure, ShapeMismatch

_MAGIC = b"TSF1"
_DTYPE_F32 = 0


def _require_3d_finite(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected a channels x height x width array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeMismatch(f"degenerate tensor shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure("tensor contains NaN or infinity")
    return arr


@dataclass
class Tensor3:
    """Validated channels x height x width array in float64."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = _require_3d_finite(self.data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class FeatureMap(Tensor3):
    """Tensor3 tagged with its semantic role and origin view."""

    role: str = ""
    view_index: int = 0

    def with_data(self, data: np.ndarray) -> "FeatureMap":
        """Same tags, new payload."""
        return FeatureMap(data, role=self.role, view_index=self.view_index)


def write_tsf1(path, array: np.ndarray) -> None:
    """Serialize an array (any rank >= 1) as float32 TSF1."""
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ShapeMismatch(f"TSF1 supports 1..255 dims, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def tsf1_bytes(array: np.ndarray) -> bytes:
    """TSF1 blob for embedding in container files."""
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.float32)
    head = _MAGIC + struct.pack("<BB", _DTYPE_F32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4", copy=False).tobytes(order="C")


def read_tsf1(path) -> np.ndarray:
    """Load a TSF1 file into float64. Raises MissingFile / CorruptFile."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise MissingFile(f"no such tensor file: {path}") from exc
    except OSError as exc:
        raise MissingFile(f"cannot read tensor file {path}: {exc}") from exc
    arr, used = parse_tsf1(blob, where=str(path))
    if used != len(blob):
        raise CorruptFile(f"{path}: {len(blob) - used} trailing bytes after payload")
    return arr


def parse_tsf1(blob: bytes, where: str = "<bytes>", offset: int = 0):
    """Decode one TSF1 record from ``blob[offset:]``.

    Returns (float64 array, offset just past the record).
    """
    if len(blob) - offset < 6:
        raise CorruptFile(f"{where}: truncated TSF1 header")
    if blob[offset : offset + 4] != _MAGIC:
        raise CorruptFile(f"{where}: bad magic {blob[offset:offset+4]!r}")
    dtype_tag, ndim = struct.unpack_from("<BB", blob, offset + 4)
    if dtype_tag != _DTYPE_F32:
        raise CorruptFile(f"{where}: unknown dtype tag {dtype_tag}")
    if ndim < 1:
        raise CorruptFile(f"{where}: zero-dimensional tensor")
    pos = offset + 6
    if len(blob) - pos < 4 * ndim:
        raise CorruptFile(f"{where}: truncated dims block")
    dims = struct.unpack_from(f"<{ndim}I", blob, pos)
    pos += 4 * ndim
    count = 1
    for d in dims:
        if d == 0:
            raise CorruptFile(f"{where}: zero-length dimension")
        count *= d
    nbytes = 4 * count
    if len(blob) - pos < nbytes:
        raise CorruptFile(f"{where}: payload truncated ({len(blob) - pos} of {nbytes} bytes)")
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
    return flat.reshape(dims).astype(np.float64), pos + nbytes
