from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from diffextract.extract import ExtractionConfig, FeatureExtractor


def make_test_image(path: Path, kind: str, size: int = 96) -> Path:
    """Deterministic synthetic photos: gradient, disc, or textured noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    if kind == "gradient":
        rgb = np.stack([xx, yy, 0.5 * (xx + yy)], axis=-1)
    elif kind == "disc":
        dist = np.hypot(yy - 0.5, xx - 0.35)
        disc = (dist < 0.25).astype(np.float64)
        rgb = np.stack([disc, 0.3 * np.ones_like(disc), 1.0 - disc], axis=-1)
    elif kind == "noise":
        gen = np.random.default_rng(613)
        rgb = gen.random((size, size, 3))
    else:
        raise ValueError(kind)
    Image.fromarray((rgb * 255).astype(np.uint8), mode="RGB").save(path)
    return path


@pytest.fixture(scope="session")
def small_extractor():
    # 64-px images give a 4x4 feature grid; fast enough to share per session
    return FeatureExtractor(ExtractionConfig(image_size=64))


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    return [
        make_test_image(root / "gradient.png", "gradient"),
        make_test_image(root / "disc.png", "disc"),
        make_test_image(root / "noise.png", "noise"),
    ]
