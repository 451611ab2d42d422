"""Segmentation and retrieval evaluation metrics.

Region IoU, boundary IoU and contour F-measure for masks (J and F in the
video-propagation sense), plus mean average precision for rankings. All
metrics land in [0, 1]; empty-vs-empty mask comparisons score 1.0 by
convention so that means stay well-defined.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

DEFAULT_BOUNDARY_TOL = 0.008  # fraction of the image diagonal


@dataclass(eq=False)
class SegEvalRecord:
    prediction: np.ndarray
    ground_truth: np.ndarray
    image_id: str = ""
    video_id: str = ""


@dataclass(eq=False)
class RetrievalEvalRecord:
    ranking: list  # ordered image ids, or (id, score) pairs
    relevant: set
    query_id: str = ""


def _as_mask(arr, name):
    mask = np.asarray(arr, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"{name} must be a 2-D mask, got shape {mask.shape}")
    return mask


def _check_same_shape(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Jaccard index |pred & gt| / |pred | gt|; both empty scores 1.0."""
    pred = _as_mask(pred, "pred")
    gt = _as_mask(gt, "gt")
    _check_same_shape(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Cells of the mask with a 4-neighbor outside it, or on the image edge."""
    mask = _as_mask(mask, "mask")
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def _tolerance_cells(shape, fraction: float) -> int:
    diagonal = math.hypot(shape[0], shape[1])
    return max(1, math.floor(fraction * diagonal + 0.5))


def _dilate(cells: np.ndarray, radius: int) -> np.ndarray:
    """Disk dilation: every cell within Euclidean distance ``radius``."""
    if not cells.any():
        return np.zeros_like(cells)
    return distance_transform_edt(~cells) <= radius


def boundary_iou(pred: np.ndarray, gt: np.ndarray,
                 radius: float = DEFAULT_BOUNDARY_TOL) -> float:
    """IoU of the two masks' dilated boundary sets.

    The dilation radius is max(1, round(radius * image diagonal)) cells.
    Both masks empty scores 1.0.
    """
    pred = _as_mask(pred, "pred")
    gt = _as_mask(gt, "gt")
    _check_same_shape(pred, gt)
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if not pred.any() and not gt.any():
        return 1.0
    r = _tolerance_cells(pred.shape, radius)
    pred_d = _dilate(mask_boundary(pred), r)
    gt_d = _dilate(mask_boundary(gt), r)
    union = np.logical_or(pred_d, gt_d).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred_d, gt_d).sum() / union)


def contour_f(pred: np.ndarray, gt: np.ndarray,
              tolerance: float = DEFAULT_BOUNDARY_TOL) -> float:
    """Boundary F-measure with a distance tolerance.

    Precision is the fraction of predicted boundary cells within the
    tolerance-dilated ground-truth boundary; recall is symmetric;
    F = 2PR / (P + R). Both boundaries empty scores 1.0; P + R = 0 scores
    0.0.
    """
    pred = _as_mask(pred, "pred")
    gt = _as_mask(gt, "gt")
    _check_same_shape(pred, gt)
    if tolerance <= 0:
        raise ValueError(f"tolerance must be > 0, got {tolerance}")
    pred_b = mask_boundary(pred)
    gt_b = mask_boundary(gt)
    if not pred_b.any() and not gt_b.any():
        return 1.0
    if not pred_b.any() or not gt_b.any():
        return 0.0
    r = _tolerance_cells(pred.shape, tolerance)
    precision = float((distance_transform_edt(~gt_b)[pred_b] <= r).mean())
    recall = float((distance_transform_edt(~pred_b)[gt_b] <= r).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def j_and_f(records: list[SegEvalRecord],
            tolerance: float = DEFAULT_BOUNDARY_TOL) -> tuple[float, float, float]:
    """(mean IoU, mean contour F, their average) over the records."""
    if not records:
        raise ValueError("j_and_f needs at least one record")
    j = float(np.mean([iou(r.prediction, r.ground_truth) for r in records]))
    f = float(np.mean([contour_f(r.prediction, r.ground_truth, tolerance)
                       for r in records]))
    return j, f, (j + f) / 2.0


def _ranking_ids(ranking) -> list:
    ids = []
    for entry in ranking:
        if isinstance(entry, (list, tuple)):
            ids.append(entry[0])
        else:
            ids.append(entry)
    return ids


def average_precision(ranking, relevant: set) -> float:
    """AP of one ranked list: mean precision@k over relevant hit positions.

    Relevant ids missing from the ranking count as never retrieved and
    contribute zero precision.
    """
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    ids = _ranking_ids(ranking)
    hits = 0
    total = 0.0
    for k, image_id in enumerate(ids, start=1):
        if image_id in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


def mean_ap(records: list[RetrievalEvalRecord]) -> float:
    """Mean of per-query average precision."""
    if not records:
        raise ValueError("mean_ap needs at least one record")
    return float(np.mean([average_precision(r.ranking, r.relevant) for r in records]))


# ---------------------------------------------------------------------------
# Report assembly (JSON / CSV outputs for the eval commands)
# ---------------------------------------------------------------------------


def segmentation_report(records: list[SegEvalRecord],
                        tolerance: float = DEFAULT_BOUNDARY_TOL) -> dict:
    if not records:
        raise ValueError("no evaluation records")
    per_item = []
    for r in records:
        per_item.append({
            "image_id": r.image_id,
            "iou": iou(r.prediction, r.ground_truth),
            "boundary_iou": boundary_iou(r.prediction, r.ground_truth, tolerance),
        })
    per_item.sort(key=lambda row: row["image_id"])
    return {
        "metrics": {
            "miou": float(np.mean([row["iou"] for row in per_item])),
            "biou": float(np.mean([row["boundary_iou"] for row in per_item])),
        },
        "boundary_tolerance": tolerance,
        "per_item": per_item,
    }


def propagation_report(records: list[SegEvalRecord],
                       tolerance: float = DEFAULT_BOUNDARY_TOL) -> dict:
    if not records:
        raise ValueError("no evaluation records")
    j, f, jf = j_and_f(records, tolerance)
    by_video: dict[str, list[SegEvalRecord]] = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(r)
    per_video = []
    for video_id in sorted(by_video):
        vj, vf, vjf = j_and_f(by_video[video_id], tolerance)
        per_video.append({"video_id": video_id, "J": vj, "F": vf, "J_and_F": vjf})
    return {
        "metrics": {"J": j, "F": f, "J_and_F": jf},
        "boundary_tolerance": tolerance,
        "per_video": per_video,
    }


def retrieval_report(records: list[RetrievalEvalRecord]) -> dict:
    if not records:
        raise ValueError("no evaluation records")
    per_query = [
        {"query_id": r.query_id, "ap": average_precision(r.ranking, r.relevant)}
        for r in records
    ]
    per_query.sort(key=lambda row: row["query_id"])
    return {
        "metrics": {"map": float(np.mean([row["ap"] for row in per_query]))},
        "per_query": per_query,
    }


def load_pairs(path) -> list[SegEvalRecord]:
    """Read mask pairs from JSON: [{image_id, video_id?, pred, gt}, ...].

    pred/gt are mask files (PNG or RLE JSON); relative paths resolve against
    the pairs file's directory.
    """
    from pathlib import Path

    from .segmentation import load_mask

    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    records = []
    for i, item in enumerate(raw):
        try:
            pred_path, gt_path = Path(item["pred"]), Path(item["gt"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"pair {i} must have 'pred' and 'gt' paths") from exc
        if not pred_path.is_absolute():
            pred_path = path.parent / pred_path
        if not gt_path.is_absolute():
            gt_path = path.parent / gt_path
        records.append(SegEvalRecord(
            prediction=load_mask(pred_path),
            ground_truth=load_mask(gt_path),
            image_id=str(item.get("image_id", i)),
            video_id=str(item.get("video_id", "")),
        ))
    return records


def load_retrieval_records(path) -> list[RetrievalEvalRecord]:
    """Read eval records from JSON: [{query_id, ranking, relevant}, ...]."""
    with open(path) as fh:
        raw = json.load(fh)
    records = []
    for i, item in enumerate(raw):
        if "relevant" not in item or "ranking" not in item:
            raise ValueError(f"record {i} must have 'ranking' and 'relevant'")
        records.append(RetrievalEvalRecord(
            ranking=item["ranking"],
            relevant=set(item["relevant"]),
            query_id=str(item.get("query_id", i)),
        ))
    return records


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_report_csv(report: dict, path) -> None:
    """Flat CSV: one row per item, then one summary row per metric."""
    item_key = next((k for k in ("per_item", "per_video", "per_query")
                     if k in report), None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if item_key:
            rows = report[item_key]
            columns = list(rows[0].keys())
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
        for name in sorted(report["metrics"]):
            writer.writerow(["mean:" + name, _fmt(report["metrics"][name])])


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return value
