import numpy as np
import pytest

from splatforge.geometry import CameraParams
from splatforge.manifest import PipelineConfig


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish random rotation via QR of a gaussian matrix."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_camera(rng, width=32, height=32) -> CameraParams:
    return CameraParams(
        fx=float(rng.uniform(0.5, 2.0) * width),
        fy=float(rng.uniform(0.5, 2.0) * height),
        cx=(width - 1) / 2 + float(rng.uniform(-2, 2)),
        cy=(height - 1) / 2 + float(rng.uniform(-2, 2)),
        rotation=random_rotation(rng),
        translation=rng.uniform(-1.0, 1.0, size=3),
        near=0.1,
        far=100.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def tiny_config():
    """Small channel counts so oracle compositions stay fast."""
    return PipelineConfig(
        seed=11,
        c_f=16,
        c_t=16,
        mvin_blocks=1,
        mvin_window=4,
        mvin_heads=2,
        tsfm_groups=1,
        tsfm_window=4,
        tsfm_heads=2,
        route_hidden=16,
        depth_count=8,
        volume_hidden=8,
        depthref_hidden=8,
        composite_channels=8,
        opacity_hidden=4,
        shape_hidden=8,
        depth_prior_channels=12,
        seg_channels=12,
        sentence_dim=24,
    )


@pytest.fixture(scope="session")
def plane_scene_dir(tmp_path_factory):
    """One shared textured-plane scene on disk for pipeline-level tests."""
    from splatforge.synthetic import generate_scene

    out = tmp_path_factory.mktemp("plane_scene")
    generate_scene("textured-plane", 7, 64, 64, out)
    return out
