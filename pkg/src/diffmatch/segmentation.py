"""Turn fused score maps into image-resolution masks and point prompts.

Two segmentation variants are supported: thresholding the upsampled score
map into a binary mask, and exporting the highest-confidence cell as a
single positive point prompt for an external promptable segmenter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .fmap import ScoreMap


@dataclass(frozen=True)
class PointPrompt:
    """One positive point in image pixel coordinates."""

    x: int
    y: int
    confidence: float

    def to_dict(self, image_id: str = "") -> dict:
        return {
            "image_id": image_id,
            "x": self.x,
            "y": self.y,
            "confidence": self.confidence,
        }


def upsample_map(score_map: ScoreMap, H: int, W: int) -> ScoreMap:
    """Bilinear upsample to H x W with half-pixel center alignment.

    Source coordinate for destination index i is (i + 0.5) * (h / H) - 0.5,
    clamped to the valid range; output values stay within the input's
    [min, max].
    """
    values = score_map.values
    h, w = values.shape
    if H < h or W < w:
        raise ValueError(f"cannot upsample {(h, w)} to smaller size {(H, W)}")
    if H == h and W == w:
        return ScoreMap(values=values.copy(), kind=score_map.kind)

    sy = np.clip((np.arange(H) + 0.5) * (h / H) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(W) + 0.5) * (w / W) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]

    top = values[y0[:, None], x0[None, :]] * (1 - fx) + values[y0[:, None], x1[None, :]] * fx
    bot = values[y1[:, None], x0[None, :]] * (1 - fx) + values[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    out = np.clip(out, values.min(), values.max())
    return ScoreMap(values=out, kind=score_map.kind)


def binarize(score_map: ScoreMap, threshold: float) -> np.ndarray:
    """Mask of cells strictly above ``threshold``; map must lie in [0, 1]."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    values = score_map.values
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("binarize expects a map normalized to [0, 1]")
    return values > threshold


def point_prompt(score_map: ScoreMap, H: int, W: int) -> PointPrompt:
    """Highest-confidence cell mapped to its pixel center at H x W.

    Ties break row-major (first maximum wins).
    """
    values = score_map.values
    h, w = values.shape
    cy, cx = np.unravel_index(int(np.argmax(values)), values.shape)
    return PointPrompt(
        x=int((cx + 0.5) * W // w),
        y=int((cy + 0.5) * H // h),
        confidence=float(values[cy, cx]),
    )


def mask_to_rle(mask: np.ndarray) -> dict:
    """Row-major run-length encoding; counts alternate starting with zeros."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    flat = mask.reshape(-1)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(boundaries).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {
        "height": int(mask.shape[0]),
        "width": int(mask.shape[1]),
        "order": "row-major",
        "counts": [int(c) for c in counts],
    }


def rle_to_mask(rle: dict) -> np.ndarray:
    """Inverse of mask_to_rle."""
    h, w = int(rle["height"]), int(rle["width"])
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in rle["counts"]:
        if value:
            flat[pos:pos + count] = True
        pos += count
        value = not value
    if pos != h * w:
        raise ValueError(f"RLE counts sum to {pos}, expected {h * w}")
    return flat.reshape(h, w)


def write_mask_png(mask: np.ndarray, path) -> None:
    """Write a 0/255 single-channel PNG."""
    img = Image.fromarray((np.asarray(mask, dtype=bool) * np.uint8(255)), mode="L")
    img.save(path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 127


def load_mask(path) -> np.ndarray:
    """Read a mask from PNG or RLE JSON, by extension."""
    path = str(path)
    if path.endswith(".png"):
        return read_mask_png(path)
    with open(path) as fh:
        return rle_to_mask(json.load(fh))


def write_point_prompt_json(prompt: PointPrompt, image_id: str, path) -> None:
    with open(path, "w") as fh:
        json.dump(prompt.to_dict(image_id), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _heat_rgb(values01: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to a blue-to-red heat palette, uint8 (h, w, 3)."""
    v = np.clip(values01, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0 + 0.5).astype(np.uint8)


def render_overlay(values01: np.ndarray, base_image: np.ndarray | None = None,
                   alpha: float = 0.6) -> Image.Image:
    """Heat overlay of a [0, 1] map, blended onto ``base_image`` if given.

    Convenience output for inspection; not part of any scored pipeline.
    """
    heat = _heat_rgb(values01).astype(np.float64)
    if base_image is None:
        base = np.full(heat.shape, 32.0)
    else:
        base = np.asarray(base_image, dtype=np.float64)
        if base.ndim == 2:
            base = np.stack([base] * 3, axis=-1)
        if base.shape[:2] != heat.shape[:2]:
            raise ValueError(
                f"base image size {base.shape[:2]} != map size {heat.shape[:2]}"
            )
    blended = ((1.0 - alpha) * base + alpha * heat).round().astype(np.uint8)
    return Image.fromarray(blended, mode="RGB")
