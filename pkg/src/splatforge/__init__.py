"""Forward-only sparse-view gaussian splatting with text-routed feature fusion.

Everything runs on numpy float64 with seeded, hash-keyed initialization,
so any two runs of the same scene, config, and weights produce identical
bytes on disk.
"""

from .errors import (
    BehindCamera,
    CorruptFile,
    DimsMismatch,
    DuplicateName,
    InvalidRange,
    IOFailure,
    MissingFile,
    NonPositiveDepth,
    NumericalFailure,
    ShapeMismatch,
    SplatError,
    TooFewViews,
    TooSmall,
    ValidationError,
)
from .gaussians import GaussianSet
from .geometry import CameraParams, DepthMap
from .manifest import PipelineConfig, SceneManifest, load_manifest
from .params import ParamStore
from .pipeline import infer, init_weights, render_targets, weight_specs
from .renderer import RenderConfig, RenderOutput, rasterize, rasterize_backward
from .tensors import FeatureMap, Tensor3, read_tsf1, write_tsf1

__version__ = "0.1.0"

__all__ = [
    "BehindCamera",
    "CameraParams",
    "CorruptFile",
    "DepthMap",
    "DimsMismatch",
    "DuplicateName",
    "FeatureMap",
    "GaussianSet",
    "InvalidRange",
    "IOFailure",
    "MissingFile",
    "NonPositiveDepth",
    "NumericalFailure",
    "ParamStore",
    "PipelineConfig",
    "RenderConfig",
    "RenderOutput",
    "SceneManifest",
    "ShapeMismatch",
    "SplatError",
    "Tensor3",
    "TooFewViews",
    "TooSmall",
    "ValidationError",
    "infer",
    "init_weights",
    "load_manifest",
    "rasterize",
    "rasterize_backward",
    "read_tsf1",
    "render_targets",
    "weight_specs",
    "write_tsf1",
]
