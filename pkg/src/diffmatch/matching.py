"""Core matching pipeline: reference mask, score maps, fusion.

Given a reference bundle (with its class token) and a target bundle, the
pipeline localizes the reference instance in the target:

  1. A reference mask is cut from the reference's semantic features via the
     class-token attention map (or supplied externally at feature resolution).
  2. Appearance features under the mask are cropped and dotted against every
     target position, average-pooled over the cropped set.
  3. A semantic map is the dot product of target semantic features with the
     class token.
  4. Both maps are min-max normalized and averaged into the fused map; the
     global score is the mean of the fused map.

All operations are pure; score-map arithmetic runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fmap import FeatureBundle, ScoreMap

MATCH_MODES = ("both", "appearance_only", "semantic_only")


@dataclass(eq=False)
class MatchOptions:
    """Knobs for one match run.

    tau: threshold on the normalized reference attention map, in (0, 1].
    mode: "both" fuses the two maps; "appearance_only"/"semantic_only" use one.
    external_mask: feature-resolution bool mask replacing the attention mask.
    use_cosine: replace raw dot products with cosine similarity in the
        appearance map (zero vectors score 0).
    """

    tau: float = 0.7
    mode: str = "both"
    external_mask: np.ndarray | None = None
    use_cosine: bool = False

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.mode not in MATCH_MODES:
            raise ValueError(f"mode must be one of {MATCH_MODES}, got {self.mode!r}")
        if self.external_mask is not None:
            self.external_mask = np.asarray(self.external_mask, dtype=bool)
            if self.external_mask.ndim != 2:
                raise ValueError("external_mask must be a 2-D boolean mask")


@dataclass(eq=False)
class MaskedFeatures:
    """Foreground appearance features cropped from the reference.

    vectors: (n, d) feature rows in row-major position order.
    positions: (n, 2) matching (y, x) coordinates.
    """

    vectors: np.ndarray
    positions: np.ndarray


@dataclass(eq=False)
class MatchResult:
    """Output of one reference/target match.

    Maps not computed under the selected mode are None. ``fused_map`` always
    holds the mode's final map with values in [0, 1]; ``global_score`` is its
    arithmetic mean.
    """

    appearance_map: ScoreMap | None
    semantic_map: ScoreMap | None
    fused_map: ScoreMap
    reference_mask: np.ndarray
    global_score: float


def _check_feature_tensor(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-D (h, w, d), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def reference_saliency(semantic_ref: np.ndarray, class_token: np.ndarray) -> np.ndarray:
    """Normalized class-attention map over the reference grid.

    Logits are dot(semantic(y, x), token) / sqrt(d), softmaxed over all h*w
    positions, then min-max rescaled to [0, 1]. A constant map yields all
    ones.
    """
    sem = _check_feature_tensor(semantic_ref, "semantic_ref")
    token = np.asarray(class_token, dtype=np.float64)
    if token.ndim != 1 or token.shape[0] != sem.shape[2]:
        raise ValueError(
            f"class_token shape {token.shape} does not match feature dim {sem.shape[2]}"
        )
    if not np.isfinite(token).all():
        raise ValueError("class_token contains non-finite values")
    d = sem.shape[2]
    logits = sem @ token / math.sqrt(d)
    flat = logits.reshape(-1)
    ex = np.exp(flat - flat.max())
    soft = (ex / ex.sum()).reshape(logits.shape)
    lo, hi = soft.min(), soft.max()
    if hi == lo:
        return np.ones_like(soft)
    return (soft - lo) / (hi - lo)


def compute_reference_mask(
    semantic_ref: np.ndarray, class_token: np.ndarray, tau: float
) -> np.ndarray:
    """Threshold the reference saliency map at ``tau``; never empty.

    A constant saliency map selects everything; an empty threshold result
    falls back to the single argmax cell (row-major tie-break).
    """
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    saliency = reference_saliency(semantic_ref, class_token)
    if saliency.min() == saliency.max():
        return np.ones_like(saliency, dtype=bool)
    mask = saliency > tau
    if not mask.any():
        mask = np.zeros_like(saliency, dtype=bool)
        idx = np.unravel_index(int(np.argmax(saliency)), saliency.shape)
        mask[idx] = True
    return mask


def mask_features(appearance_ref: np.ndarray, mask: np.ndarray) -> MaskedFeatures:
    """Crop the feature vectors at mask-true positions, row-major order."""
    app = _check_feature_tensor(appearance_ref, "appearance_ref")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != app.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != feature grid {app.shape[:2]}")
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValueError("mask selects no positions")
    return MaskedFeatures(
        vectors=app[ys, xs, :].copy(),
        positions=np.stack([ys, xs], axis=1),
    )


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    out = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
    return out


def appearance_score_map(
    ref: MaskedFeatures, appearance_target: np.ndarray, use_cosine: bool = False
) -> ScoreMap:
    """Mean dot product of the cropped reference features with each target cell.

    With ``use_cosine``, every pairwise dot becomes a cosine similarity and
    zero vectors contribute 0.
    """
    target = _check_feature_tensor(appearance_target, "appearance_target")
    vectors = np.asarray(ref.vectors, dtype=np.float64)
    if vectors.shape[1] != target.shape[2]:
        raise ValueError(
            f"feature dim mismatch: reference {vectors.shape[1]}, "
            f"target {target.shape[2]}"
        )
    if use_cosine:
        pooled = _unit_rows(vectors).mean(axis=0)
        values = _unit_rows(target) @ pooled
    else:
        pooled = vectors.mean(axis=0)
        values = target @ pooled
    return ScoreMap(values=values, kind="appearance")


def semantic_score_map(semantic_target: np.ndarray, class_token: np.ndarray) -> ScoreMap:
    """Raw dot product of each target semantic vector with the class token."""
    sem = _check_feature_tensor(semantic_target, "semantic_target")
    token = np.asarray(class_token, dtype=np.float64)
    if token.ndim != 1 or token.shape[0] != sem.shape[2]:
        raise ValueError(
            f"class_token shape {token.shape} does not match feature dim {sem.shape[2]}"
        )
    return ScoreMap(values=sem @ token, kind="semantic")


def normalize_map(score_map: ScoreMap) -> ScoreMap:
    """Min-max rescale to [0, 1]; constant maps become all ones. Idempotent."""
    values = score_map.values
    if not np.isfinite(values).all():
        raise ValueError("score map contains non-finite values")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return ScoreMap(values=np.ones_like(values), kind="normalized")
    return ScoreMap(values=(values - lo) / (hi - lo), kind="normalized")


def fuse_maps(appearance: ScoreMap, semantic: ScoreMap, mode: str = "both") -> ScoreMap:
    """Combine two normalized maps per ``mode``; output kind is "fused"."""
    if mode not in MATCH_MODES:
        raise ValueError(f"mode must be one of {MATCH_MODES}, got {mode!r}")
    for name, m in (("appearance", appearance), ("semantic", semantic)):
        if m.kind != "normalized":
            raise ValueError(f"{name} map must be normalized, got kind {m.kind!r}")
    if appearance.shape != semantic.shape:
        raise ValueError(f"map shapes differ: {appearance.shape} vs {semantic.shape}")
    if mode == "appearance_only":
        values = appearance.values.copy()
    elif mode == "semantic_only":
        values = semantic.values.copy()
    else:
        values = 0.5 * (appearance.values + semantic.values)
    return ScoreMap(values=values, kind="fused")


def match(
    reference: FeatureBundle, target: FeatureBundle, options: MatchOptions | None = None
) -> MatchResult:
    """Run the full matching pipeline on one reference/target pair."""
    options = options or MatchOptions()
    if reference.appearance.shape[2] != target.appearance.shape[2]:
        raise ValueError(
            f"feature dim mismatch: reference d={reference.appearance.shape[2]}, "
            f"target d={target.appearance.shape[2]}"
        )
    if options.external_mask is not None:
        mask = options.external_mask
        if mask.shape != reference.appearance.shape[:2]:
            raise ValueError(
                f"external mask shape {mask.shape} != reference grid "
                f"{reference.appearance.shape[:2]}"
            )
    else:
        mask = compute_reference_mask(
            reference.semantic, reference.class_token, options.tau
        )

    app_norm = None
    if options.mode != "semantic_only":
        cropped = mask_features(reference.appearance, mask)
        raw_app = appearance_score_map(
            cropped, target.appearance, use_cosine=options.use_cosine
        )
        app_norm = normalize_map(raw_app)

    sem_norm = None
    if options.mode != "appearance_only":
        raw_sem = semantic_score_map(target.semantic, reference.class_token)
        sem_norm = normalize_map(raw_sem)

    if options.mode == "both":
        fused = fuse_maps(app_norm, sem_norm, "both")
    elif options.mode == "appearance_only":
        fused = ScoreMap(values=app_norm.values.copy(), kind="fused")
    else:
        fused = ScoreMap(values=sem_norm.values.copy(), kind="fused")

    return MatchResult(
        appearance_map=app_norm,
        semantic_map=sem_norm,
        fused_map=fused,
        reference_mask=mask,
        global_score=float(fused.values.mean()),
    )


def downsample_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Any-pool an H x W mask down to h x w.

    Destination cell (y, x) is true iff any source pixel whose block index
    floor(py * h / H), floor(px * w / W) equals (y, x) is true. Non-empty
    input gives non-empty output.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    H, W = mask.shape
    if H < h or W < w:
        raise ValueError(f"cannot downsample {(H, W)} to larger grid {(h, w)}")
    if not mask.any():
        raise ValueError("cannot downsample an empty mask")
    out = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(mask)
    out[ys * h // H, xs * w // W] = True
    return out
