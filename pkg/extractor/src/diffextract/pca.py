"""Joint PCA rendering of appearance feature maps (diagnostic only)."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .fmap_io import Bundle


def pca_rgb_maps(bundles: list[Bundle]) -> list[np.ndarray]:
    """Project all bundles' appearance features onto 3 shared components.

    Returns one (h, w, 3) float map in [0, 1] per bundle; channels are
    scaled jointly across bundles so equal features get equal colors.
    Degenerate (constant) features yield uniform gray maps with a warning.
    """
    if not bundles:
        raise ValueError("need at least one bundle")
    stacked = np.concatenate(
        [b.appearance.reshape(-1, b.appearance.shape[-1]).astype(np.float64)
         for b in bundles], axis=0)
    centered = stacked - stacked.mean(axis=0, keepdims=True)
    if np.allclose(centered, 0.0):
        warnings.warn("appearance features are constant; PCA is degenerate")
        return [np.full((*b.appearance.shape[:2], 3), 0.5) for b in bundles]
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:3]
    if components.shape[0] < 3:
        components = np.vstack([
            components,
            np.zeros((3 - components.shape[0], components.shape[1])),
        ])
    projected = centered @ components.T
    lo = projected.min(axis=0, keepdims=True)
    hi = projected.max(axis=0, keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (projected - lo) / span

    maps = []
    offset = 0
    for b in bundles:
        h, w = b.appearance.shape[:2]
        maps.append(scaled[offset:offset + h * w].reshape(h, w, 3))
        offset += h * w
    return maps


def render_pca(bundles: list[Bundle], out_dir, scale: int = 8) -> list[Path]:
    """Write one PNG per bundle; paths are returned in bundle order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for bundle, rgb in zip(bundles, pca_rgb_maps(bundles)):
        img = Image.fromarray((rgb * 255.0 + 0.5).astype(np.uint8), mode="RGB")
        if scale > 1:
            img = img.resize((img.width * scale, img.height * scale),
                             Image.NEAREST)
        name = bundle.image_id.replace("/", "_") or "bundle"
        path = out_dir / f"{name}.pca.png"
        img.save(path, format="PNG")
        paths.append(path)
    return paths
