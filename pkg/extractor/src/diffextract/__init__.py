"""Diffusion-feature extractor emitting FMAP bundles."""

__version__ = "0.1.0"

from .extract import ExtractionConfig, ExtractionResult, FeatureExtractor
from .fmap_io import Bundle, read_bundle, write_bundle
from .pca import pca_rgb_maps, render_pca

__all__ = [
    "Bundle",
    "ExtractionConfig",
    "ExtractionResult",
    "FeatureExtractor",
    "pca_rgb_maps",
    "read_bundle",
    "render_pca",
    "write_bundle",
]
