"""Personalized instance matching, segmentation and retrieval over
diffusion feature bundles."""

__version__ = "0.1.0"

from .fmap import (
    FeatureBundle,
    ScoreMap,
    load_fmap,
    read_fmap,
    save_fmap,
    validate_bundle,
    write_fmap,
)
from .matching import (
    MatchOptions,
    MatchResult,
    MaskedFeatures,
    appearance_score_map,
    compute_reference_mask,
    downsample_mask,
    fuse_maps,
    mask_features,
    match,
    normalize_map,
    semantic_score_map,
)
from .segmentation import PointPrompt, binarize, point_prompt, upsample_map

__all__ = [
    "FeatureBundle",
    "ScoreMap",
    "MatchOptions",
    "MatchResult",
    "MaskedFeatures",
    "PointPrompt",
    "appearance_score_map",
    "binarize",
    "compute_reference_mask",
    "downsample_mask",
    "fuse_maps",
    "load_fmap",
    "mask_features",
    "match",
    "normalize_map",
    "point_prompt",
    "read_fmap",
    "save_fmap",
    "semantic_score_map",
    "upsample_map",
    "validate_bundle",
    "write_fmap",
]
