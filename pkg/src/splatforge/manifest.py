"""Scene manifests and the pipeline configuration.

A scene is a single JSON document: a shared depth range, a list of posed
input views (image path, intrinsics, pose, an optional text description,
optional precomputed feature / embedding files), and a list of target
cameras for novel-view rendering. Config serialization is canonical
(sorted keys, two-space indent) so serialize -> parse -> serialize is
byte identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import CorruptFile, InvalidRange, MissingFile, TooFewViews
from .geometry import CameraParams
from .metrics import LossWeights
from .providers import FeatureProviderConfig, SentenceProviderConfig, ROLE_DEPTH_PRIOR, ROLE_SEGMENTATION


# ---------------------------------------------------------------------------
# pipeline configuration
# ---------------------------------------------------------------------------


@dataclass
class RenderSettings:
    """Rasterizer knobs carried by the config; width/height come from the
    scene at render time."""

    background: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    tile: int = 16
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    radius_sigma: float = 3.0


@dataclass
class PipelineConfig:
    seed: int = 0
    # channel widths
    c_f: int = 128
    c_t: int = 128
    # cross-view attention
    mvin_blocks: int = 2
    mvin_window: int = 8
    mvin_heads: int = 4
    # fusion
    tsfm_groups: int = 2
    tsfm_window: int = 8
    tsfm_heads: int = 4
    route_hidden: int = 128
    # depth decoding
    depth_count: int = 32
    depth_spacing: str = "inverse"
    volume_hidden: int = 32
    depthref_hidden: int = 32
    composite_channels: int = 32
    # gaussian heads
    sh_degree: int = 1
    opacity_hidden: int = 16
    shape_hidden: int = 64
    # providers
    depth_prior_channels: int = 128
    seg_channels: int = 128
    feature_stride: int = 4
    sentence_dim: int = 384
    provider_kind: str = "synthetic"
    # loss and rendering
    loss_mse: float = 1.0
    loss_perceptual: float = 0.05
    loss_ssim: float = 0.03
    render: RenderSettings = field(default_factory=RenderSettings)

    def __post_init__(self) -> None:
        if isinstance(self.render, dict):
            self.render = RenderSettings(**self.render)
        if self.sh_degree not in (0, 1):
            raise InvalidRange(f"sh_degree must be 0 or 1, got {self.sh_degree}")
        if self.depth_count < 2:
            raise InvalidRange(f"depth_count must be >= 2, got {self.depth_count}")
        for name in ("c_f", "c_t", "mvin_blocks", "mvin_window", "mvin_heads",
                     "tsfm_window", "tsfm_heads", "route_hidden", "volume_hidden",
                     "depthref_hidden", "composite_channels", "opacity_hidden",
                     "shape_hidden", "depth_prior_channels", "seg_channels",
                     "feature_stride", "sentence_dim"):
            if getattr(self, name) < 1:
                raise InvalidRange(f"{name} must be >= 1")
        if self.tsfm_groups < 0:
            raise InvalidRange("tsfm_groups must be >= 0")
        if self.c_f % self.mvin_heads != 0:
            raise InvalidRange("c_f must be divisible by mvin_heads")
        if self.c_t % self.tsfm_heads != 0:
            raise InvalidRange("c_t must be divisible by tsfm_heads")

    # providers -------------------------------------------------------------

    def depth_prior_provider(self) -> FeatureProviderConfig:
        return FeatureProviderConfig(
            kind=self.provider_kind,
            role=ROLE_DEPTH_PRIOR,
            channels=self.depth_prior_channels,
            stride=self.feature_stride,
            seed=self.seed,
        )

    def seg_provider(self) -> FeatureProviderConfig:
        return FeatureProviderConfig(
            kind=self.provider_kind,
            role=ROLE_SEGMENTATION,
            channels=self.seg_channels,
            stride=self.feature_stride,
            seed=self.seed,
        )

    def sentence_provider(self) -> SentenceProviderConfig:
        return SentenceProviderConfig(
            kind=self.provider_kind, dim=self.sentence_dim, seed=self.seed
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(mse=self.loss_mse, perceptual=self.loss_perceptual, ssim=self.loss_ssim)

    # serialization ----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: Dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidRange(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise MissingFile(f"no such config: {path}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# scene manifest
# ---------------------------------------------------------------------------


_CAM_KEYS = ("fx", "fy", "cx", "cy", "rotation", "translation")


@dataclass
class ViewRecord:
    camera: CameraParams
    image_path: Optional[str] = None
    description: str = ""
    depth_prior_path: Optional[str] = None
    seg_path: Optional[str] = None
    sentence_path: Optional[str] = None


@dataclass
class TargetRecord:
    camera: CameraParams
    image_path: Optional[str] = None  # ground truth, when present


@dataclass
class SceneManifest:
    near: float
    far: float
    views: List[ViewRecord]
    targets: List[TargetRecord]
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if not (0.0 < self.near < self.far):
            raise InvalidRange(f"manifest needs 0 < near < far, got {self.near}, {self.far}")
        if len(self.views) < 1:
            raise TooFewViews("scene manifest must list at least one view")

    def resolve(self, rel: Optional[str]) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def description(self) -> str:
        """Scene-level text: the first non-empty view description."""
        for v in self.views:
            if v.description:
                return v.description
        return ""


def _camera_from_record(rec: Dict, near: float, far: float, where: str) -> CameraParams:
    for key in _CAM_KEYS:
        if key not in rec:
            raise InvalidRange(f"{where}: camera record missing {key!r}")
    rot = np.asarray(rec["rotation"], dtype=np.float64)
    if rot.size != 9:
        raise InvalidRange(f"{where}: rotation must have 9 entries")
    return CameraParams(
        fx=rec["fx"],
        fy=rec["fy"],
        cx=rec["cx"],
        cy=rec["cy"],
        rotation=rot.reshape(3, 3),
        translation=np.asarray(rec["translation"], dtype=np.float64),
        near=float(rec.get("near", near)),
        far=float(rec.get("far", far)),
    )


def camera_to_record(cam: CameraParams) -> Dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],
        "translation": [float(v) for v in cam.translation],
        "near": cam.near,
        "far": cam.far,
    }


def load_manifest(path) -> SceneManifest:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingFile(f"no such scene manifest: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: invalid JSON ({exc})") from exc
    if "near" not in data or "far" not in data:
        raise InvalidRange(f"{path}: manifest must declare near and far")
    near, far = float(data["near"]), float(data["far"])
    views = []
    for i, rec in enumerate(data.get("views", [])):
        cam = _camera_from_record(rec, near, far, f"{path} view {i}")
        views.append(
            ViewRecord(
                camera=cam,
                image_path=rec.get("image_path"),
                description=rec.get("description", ""),
                depth_prior_path=rec.get("depth_prior_path", rec.get("df_path")),
                seg_path=rec.get("seg_path", rec.get("sf_path")),
                sentence_path=rec.get("sentence_path"),
            )
        )
    targets = []
    for i, rec in enumerate(data.get("targets", [])):
        cam = _camera_from_record(rec, near, far, f"{path} target {i}")
        targets.append(TargetRecord(camera=cam, image_path=rec.get("image_path")))
    manifest = SceneManifest(near=near, far=far, views=views, targets=targets, base_dir=p.parent)
    for i, v in enumerate(manifest.views):
        if v.image_path is None:
            raise InvalidRange(f"{path}: view {i} has no image_path")
        img = manifest.resolve(v.image_path)
        if not img.exists():
            raise MissingFile(f"{path}: view {i} image not found: {img}")
        for extra in (v.depth_prior_path, v.seg_path, v.sentence_path):
            if extra is not None and not manifest.resolve(extra).exists():
                raise MissingFile(f"{path}: view {i} feature file not found: {extra}")
    return manifest


def save_manifest(path, near: float, far: float, views: List[Dict], targets: List[Dict]) -> None:
    doc = {"near": near, "far": far, "views": views, "targets": targets}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
