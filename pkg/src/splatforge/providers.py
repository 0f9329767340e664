"""Backbone feature providers.

Large pretrained encoders (monocular depth, segmentation, sentence
embedding) are external to this package. A provider either ingests a
precomputed TSF1 feature file or synthesizes a deterministic stand-in:
band-limited pseudo-random fields for spatial features, and a hashed
unit vector for text. Both paths are pure functions of their config.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimsMismatch, InvalidRange, MissingFile, ShapeMismatch
from .tensors import FeatureMap, read_tsf1

KIND_FILE = "file"
KIND_SYNTHETIC = "synthetic"

ROLE_DEPTH_PRIOR = "depth_prior"
ROLE_SEGMENTATION = "segmentation"


@dataclass
class FeatureProviderConfig:
    """How to obtain one spatial feature stream for every view."""

    kind: str = KIND_SYNTHETIC
    role: str = ROLE_DEPTH_PRIOR
    channels: int = 128
    stride: int = 4
    amplitude: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (KIND_FILE, KIND_SYNTHETIC):
            raise InvalidRange(f"unknown provider kind {self.kind!r}")
        if self.channels < 1:
            raise InvalidRange(f"channels must be >= 1, got {self.channels}")
        if self.stride < 1:
            raise InvalidRange(f"stride must be >= 1, got {self.stride}")
        if not self.amplitude > 0.0:
            raise InvalidRange(f"amplitude must be positive, got {self.amplitude}")


@dataclass
class SentenceProviderConfig:
    kind: str = KIND_SYNTHETIC
    dim: int = 384
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (KIND_FILE, KIND_SYNTHETIC):
            raise InvalidRange(f"unknown provider kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidRange(f"embedding dim must be >= 1, got {self.dim}")


@dataclass
class SentenceEmbedding:
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise InvalidRange("sentence embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _quantize_f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


def _field_rng(cfg_seed: int, view_index: int, role: str) -> np.random.Generator:
    digest = hashlib.sha256(
        struct.pack("<qq", cfg_seed, view_index) + role.encode("utf-8")
    ).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _synthetic_field(cfg: FeatureProviderConfig, view_index: int, h: int, w: int) -> np.ndarray:
    """Smooth seeded field: low-frequency cosine mixtures plus gaussian blobs.

    Output is (channels, h, w) with |v| <= amplitude, snapped to float32
    resolution so dumps and reloads drive identical arithmetic.
    """
    rng = _field_rng(cfg.seed, view_index, cfg.role)
    ys, xs = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    out = np.empty((cfg.channels, h, w), dtype=np.float64)
    for c in range(cfg.channels):
        acc = np.zeros((h, w), dtype=np.float64)
        n_waves = int(rng.integers(2, 5))
        for _ in range(n_waves):
            freq = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.3, 1.0)
            acc += amp * np.cos(2.0 * np.pi * (freq[0] * xs + freq[1] * ys) + phase)
        n_blobs = int(rng.integers(1, 4))
        for _ in range(n_blobs):
            center = rng.uniform(0.0, 1.0, size=2)
            sig = rng.uniform(0.08, 0.3)
            amp = rng.uniform(-1.0, 1.0)
            acc += amp * np.exp(-(((xs - center[0]) ** 2 + (ys - center[1]) ** 2) / (2.0 * sig * sig)))
        out[c] = acc
    peak = np.abs(out).max()
    if peak > cfg.amplitude:
        out *= cfg.amplitude / peak
    return _quantize_f32(out)


def load_feature(
    cfg: FeatureProviderConfig,
    view_index: int,
    image_h: int,
    image_w: int,
    path: Optional[str] = None,
) -> FeatureMap:
    """Produce the feature map for one view at stride-reduced resolution.

    File providers validate the stored dims against the expected grid;
    synthetic providers generate a seeded field at that grid.
    """
    fh = -(-image_h // cfg.stride)
    fw = -(-image_w // cfg.stride)
    if cfg.kind == KIND_FILE:
        if path is None:
            raise MissingFile(f"view {view_index} has no {cfg.role} feature path")
        arr = read_tsf1(path)
        if arr.ndim != 3:
            raise DimsMismatch(f"{path}: feature file must be 3-D, got shape {arr.shape}")
        if arr.shape != (cfg.channels, fh, fw):
            raise DimsMismatch(
                f"{path}: feature dims {arr.shape} disagree with expected {(cfg.channels, fh, fw)}"
            )
        return FeatureMap(arr, role=cfg.role, view_index=view_index)
    return FeatureMap(
        _synthetic_field(cfg, view_index, fh, fw), role=cfg.role, view_index=view_index
    )


def sentence_embedding(
    cfg: SentenceProviderConfig, description: str, path: Optional[str] = None
) -> SentenceEmbedding:
    """Text description -> embedding vector.

    The synthetic path hashes the UTF-8 bytes of the description (plus
    the provider seed) with SHA-256, seeds an RNG from the digest, and
    returns a unit-normalized gaussian vector. Locale independent, same
    string always gives the same vector. File embeddings are passed
    through unnormalized.
    """
    if cfg.kind == KIND_FILE:
        if path is None:
            raise MissingFile("sentence provider kind 'file' needs an embedding path")
        arr = read_tsf1(path)
        flat = arr.reshape(-1)
        if flat.shape[0] != cfg.dim:
            raise DimsMismatch(f"{path}: embedding dim {flat.shape[0]} != configured {cfg.dim}")
        return SentenceEmbedding(flat)
    digest = hashlib.sha256(
        struct.pack("<q", cfg.seed) + description.encode("utf-8")
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(cfg.dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # vanishingly unlikely, but keep the unit-norm contract
        vec = np.zeros(cfg.dim)
        vec[0] = 1.0
        norm = 1.0
    return SentenceEmbedding(_quantize_f32(vec / norm))
