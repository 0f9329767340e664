"""Named parameter blocks with seeded deterministic initialization.

A ParamStore is a flat name -> array mapping. Initialization draws each
block from its own RNG stream keyed by (seed, block name) so a store is
reproducible bit for bit and insensitive to declaration order. Values
are snapped to float32 resolution at creation time; the on-disk archive
is float32, and the snap guarantees that freshly initialized weights and
weights reloaded from disk drive identical float64 arithmetic.

Archive layout (magic "TSA1"):

    magic   4 bytes  b"TSA1"
    seed    u64 LE
    count   u32 LE
    blocks  count records, sorted by name:
        name_len u16 LE, name UTF-8, TSF1 blob
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .errors import CorruptFile, DuplicateName, MissingFile, ShapeMismatch
from .tensors import parse_tsf1, tsf1_bytes

_ARCHIVE_MAGIC = b"TSA1"

# Initialization kinds.
UNIFORM_FANIN = "uniform_fanin"
ZEROS = "zeros"
ONES = "ones"


@dataclass(frozen=True)
class BlockSpec:
    """One parameter block: name, shape, and how to initialize it."""

    name: str
    shape: Tuple[int, ...]
    init: str = UNIFORM_FANIN
    fan_in: int = 0


def _block_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    stream = int.from_bytes(digest[:8], "little")
    return np.random.default_rng((np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(stream)).item())


def _quantize_f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


class ParamStore:
    """Flat dictionary of named float64 arrays plus the seed that made it."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.blocks: Dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.blocks:
            raise DuplicateName(f"parameter block {name!r} already registered")
        self.blocks[name] = np.asarray(array, dtype=np.float64)

    def get(self, name: str, shape: Tuple[int, ...] | None = None) -> np.ndarray:
        if name not in self.blocks:
            raise MissingFile(f"parameter block {name!r} not found in store")
        arr = self.blocks[name]
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise ShapeMismatch(f"block {name!r} has shape {arr.shape}, expected {shape}")
        return arr

    def set_(self, name: str, array: np.ndarray) -> None:
        """Overwrite an existing block (tests use this to force ablations)."""
        if name not in self.blocks:
            raise MissingFile(f"parameter block {name!r} not found in store")
        if tuple(np.shape(array)) != tuple(self.blocks[name].shape):
            raise ShapeMismatch(f"cannot reshape block {name!r}")
        self.blocks[name] = np.asarray(array, dtype=np.float64)

    def names(self):
        return sorted(self.blocks)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_ARCHIVE_MAGIC)
            fh.write(struct.pack("<QI", self.seed & 0xFFFFFFFFFFFFFFFF, len(self.blocks)))
            for name in sorted(self.blocks):
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(tsf1_bytes(self.blocks[name]))

    @classmethod
    def load(cls, path) -> "ParamStore":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except FileNotFoundError as exc:
            raise MissingFile(f"no such weights archive: {path}") from exc
        except OSError as exc:
            raise MissingFile(f"cannot read weights archive {path}: {exc}") from exc
        if len(blob) < 16 or blob[:4] != _ARCHIVE_MAGIC:
            raise CorruptFile(f"{path}: not a weights archive")
        seed, count = struct.unpack_from("<QI", blob, 4)
        store = cls(seed=seed)
        pos = 16
        for _ in range(count):
            if len(blob) - pos < 2:
                raise CorruptFile(f"{path}: truncated block name")
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            if len(blob) - pos < nlen:
                raise CorruptFile(f"{path}: truncated block name")
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            arr, pos = parse_tsf1(blob, where=str(path), offset=pos)
            store.add(name, arr)
        if pos != len(blob):
            raise CorruptFile(f"{path}: {len(blob) - pos} trailing bytes")
        return store


def init_params(specs: Iterable[BlockSpec], seed: int) -> ParamStore:
    """Materialize every block in ``specs`` deterministically from ``seed``.

    Weights are uniform in +-1/sqrt(fan_in), biases zero, gain-style
    blocks one. Same (specs, seed) pair gives bit-identical values.
    """
    store = ParamStore(seed=seed)
    for spec in specs:
        if spec.init == ZEROS:
            arr = np.zeros(spec.shape, dtype=np.float64)
        elif spec.init == ONES:
            arr = np.ones(spec.shape, dtype=np.float64)
        elif spec.init == UNIFORM_FANIN:
            if spec.fan_in <= 0:
                raise ShapeMismatch(f"block {spec.name!r} needs a positive fan_in")
            bound = 1.0 / float(np.sqrt(spec.fan_in))
            rng = _block_rng(seed, spec.name)
            arr = rng.uniform(-bound, bound, size=spec.shape)
        else:
            raise ShapeMismatch(f"unknown init kind {spec.init!r} for block {spec.name!r}")
        store.add(spec.name, _quantize_f32(arr))
    return store


def conv_spec(name: str, out_ch: int, in_ch: int, k: int) -> list:
    """Weight + bias specs for a dense 2-D convolution."""
    return [
        BlockSpec(f"{name}.w", (out_ch, in_ch, k, k), UNIFORM_FANIN, fan_in=in_ch * k * k),
        BlockSpec(f"{name}.b", (out_ch,), ZEROS),
    ]


def depthwise_spec(name: str, channels: int, k: int) -> list:
    return [
        BlockSpec(f"{name}.w", (channels, k, k), UNIFORM_FANIN, fan_in=k * k),
        BlockSpec(f"{name}.b", (channels,), ZEROS),
    ]


def linear_spec(name: str, out_dim: int, in_dim: int) -> list:
    return [
        BlockSpec(f"{name}.w", (out_dim, in_dim), UNIFORM_FANIN, fan_in=in_dim),
        BlockSpec(f"{name}.b", (out_dim,), ZEROS),
    ]


def layernorm_spec(name: str, channels: int) -> list:
    return [
        BlockSpec(f"{name}.g", (channels,), ONES),
        BlockSpec(f"{name}.b", (channels,), ZEROS),
    ]
