"""Multi-instance benchmark construction from video tracking annotations.

Builds retrieval / image-segmentation / video-propagation splits out of
videos whose frames contain at least two instances of one object class, so
every query comes with a same-class hard negative in frame. Selection is
reproducible: a documented PRNG keyed on (seed, video_id) drives all frame
sampling, so manifests are a pure function of (annotations, task, seed) and
are insensitive to video order.

Annotation input schema (JSON, unknown fields ignored):

    {"videos": [
        {"video_id": str,
         "frames": [
            {"frame_id": str,
             "instances": [
                {"instance_id": str|int,
                 "class_name": str,
                 "area": number,          # optional
                 "mask": object|str}]}]}]}  # optional, kept opaque

Instance area resolution: explicit "area" field if present; else the sum of
foreground runs when "mask" is an uncompressed RLE dict with integer
"counts"; else 0.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable

logger = logging.getLogger(__name__)

TASKS = ("retrieval", "image_seg", "video_prop")
GALLERY_MODES = ("disjoint", "inclusive")

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 PRNG: 64-bit state advanced by 0x9E3779B97F4A7C15 per draw,
    output finalized by xorshift-multiply mixing (constants
    0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Identical output on every
    platform and easy to re-implement in any language.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def sample(self, seq, k: int) -> list:
        """k distinct items, uniformly without replacement (partial
        Fisher-Yates shuffle; draw order is part of the contract)."""
        items = list(seq)
        if k > len(items):
            raise ValueError(f"cannot sample {k} from {len(items)} items")
        for i in range(k):
            j = i + self.randbelow(len(items) - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]


def video_stream(seed: int, video_id: str) -> SplitMix64:
    """Per-video PRNG stream keyed by blake2b("{seed}:{video_id}")."""
    digest = hashlib.blake2b(f"{seed}:{video_id}".encode("utf-8"),
                             digest_size=8).digest()
    return SplitMix64(int.from_bytes(digest, "little"))


# ---------------------------------------------------------------------------
# Annotation model and parsing
# ---------------------------------------------------------------------------


@dataclass
class InstanceAnnotation:
    instance_id: str
    class_name: str
    area: float | None = None
    mask: object = None

    def resolved_area(self) -> float:
        if self.area is not None:
            return float(self.area)
        if isinstance(self.mask, dict) and isinstance(self.mask.get("counts"), list):
            counts = self.mask["counts"]
            if all(isinstance(c, int) for c in counts):
                return float(sum(counts[1::2]))
        return 0.0


@dataclass
class FrameAnnotation:
    frame_id: str
    instances: list[InstanceAnnotation] = field(default_factory=list)

    def class_instances(self, class_name: str) -> list[InstanceAnnotation]:
        return [i for i in self.instances if i.class_name == class_name]


@dataclass
class VideoAnnotation:
    video_id: str
    frames: list[FrameAnnotation] = field(default_factory=list)


class SchemaError(ValueError):
    """Annotation schema violation; ``path`` points at the offending node."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return obj[key]


def _require_str(obj: dict, key: str, path: str) -> str:
    value = _require(obj, key, path)
    if not isinstance(value, str):
        raise SchemaError(f"{path}.{key}",
                          f"expected a string, got {type(value).__name__}")
    return value


def parse_annotations(source) -> list[VideoAnnotation]:
    """Parse an annotation document (dict, JSON string/bytes, or path).

    Lossless in video/frame/instance identity, class names, areas and mask
    payloads; unknown fields are ignored. Violations raise SchemaError with
    the JSON path of the bad node.
    """
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, os.PathLike) or (
            isinstance(source, str) and os.path.exists(source)):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, (str, bytes)):
        doc = json.loads(source)
    else:
        raise TypeError(f"cannot parse annotations from {type(source).__name__}")

    videos_raw = _require(doc, "videos", "$")
    if not isinstance(videos_raw, list):
        raise SchemaError("$.videos", "expected a list")
    videos = []
    for vi, video_raw in enumerate(videos_raw):
        vpath = f"$.videos[{vi}]"
        video_id = _require_str(video_raw, "video_id", vpath)
        frames_raw = _require(video_raw, "frames", vpath)
        if not isinstance(frames_raw, list):
            raise SchemaError(f"{vpath}.frames", "expected a list")
        frames = []
        for fi, frame_raw in enumerate(frames_raw):
            fpath = f"{vpath}.frames[{fi}]"
            frame_id = _require_str(frame_raw, "frame_id", fpath)
            instances_raw = _require(frame_raw, "instances", fpath)
            if not isinstance(instances_raw, list):
                raise SchemaError(f"{fpath}.instances", "expected a list")
            instances = []
            for ii, inst_raw in enumerate(instances_raw):
                ipath = f"{fpath}.instances[{ii}]"
                inst_id = _require(inst_raw, "instance_id", ipath)
                if not isinstance(inst_id, (str, int)):
                    raise SchemaError(f"{ipath}.instance_id",
                                      "expected a string or integer")
                class_name = _require_str(inst_raw, "class_name", ipath)
                area = inst_raw.get("area")
                if area is not None and not isinstance(area, (int, float)):
                    raise SchemaError(f"{ipath}.area", "expected a number")
                instances.append(InstanceAnnotation(
                    instance_id=str(inst_id),
                    class_name=class_name,
                    area=None if area is None else float(area),
                    mask=inst_raw.get("mask"),
                ))
            frames.append(FrameAnnotation(frame_id=frame_id, instances=instances))
        videos.append(VideoAnnotation(video_id=video_id, frames=frames))
    return videos


# ---------------------------------------------------------------------------
# Multi-instance filtering
# ---------------------------------------------------------------------------


def filter_multi_instance(
    videos: Iterable[VideoAnnotation],
) -> list[tuple[VideoAnnotation, str]]:
    """Keep videos with >= 2 co-present same-class instances; pick the class.

    A class qualifies when some frame contains two distinct instance ids of
    it. Among qualifying classes the one with the most distinct instance ids
    across the video wins (ties: lexicographically smallest class name).
    Kept videos retain only the frames with >= 2 instances of that class.
    """
    kept = []
    for video in videos:
        copresent: set[str] = set()
        id_counts: dict[str, set[str]] = {}
        for frame in video.frames:
            per_class: dict[str, set[str]] = {}
            for inst in frame.instances:
                per_class.setdefault(inst.class_name, set()).add(inst.instance_id)
                id_counts.setdefault(inst.class_name, set()).add(inst.instance_id)
            for class_name, ids in per_class.items():
                if len(ids) >= 2:
                    copresent.add(class_name)
        if not copresent:
            continue
        target = min(copresent, key=lambda c: (-len(id_counts[c]), c))
        frames = [
            frame for frame in video.frames
            if len({i.instance_id for i in frame.class_instances(target)}) >= 2
        ]
        kept.append((VideoAnnotation(video.video_id, frames), target))
    return kept


# ---------------------------------------------------------------------------
# Split sampling
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    video_id: str
    class_name: str
    target_instance_id: str
    query: str                       # query/reference image id
    positives: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "class_name": self.class_name,
            "target_instance_id": self.target_instance_id,
            "query": self.query,
            "positives": list(self.positives),
        }


@dataclass
class BenchmarkManifest:
    task: str
    seed: int
    entries: list[ManifestEntry]
    gallery: list[dict]              # [{"image_id", "video_id", "frame_id"}]
    stats: dict
    gallery_mode: str = "disjoint"
    excluded: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seed": self.seed,
            "gallery_mode": self.gallery_mode,
            "entries": [e.to_dict() for e in self.entries],
            "gallery": list(self.gallery),
            "stats": dict(self.stats),
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchmarkManifest":
        return cls(
            task=raw["task"],
            seed=raw["seed"],
            entries=[ManifestEntry(
                video_id=e["video_id"],
                class_name=e["class_name"],
                target_instance_id=e["target_instance_id"],
                query=e["query"],
                positives=list(e["positives"]),
            ) for e in raw["entries"]],
            gallery=list(raw["gallery"]),
            stats=dict(raw["stats"]),
            gallery_mode=raw.get("gallery_mode", "disjoint"),
            excluded=list(raw.get("excluded", [])),
        )


def _image_id(video_id: str, frame_id: str) -> str:
    return f"{video_id}/{frame_id}"


def _pick_target_instance(frame: FrameAnnotation, class_name: str) -> str:
    candidates = frame.class_instances(class_name)
    return min(candidates,
               key=lambda i: (-i.resolved_area(), i.instance_id)).instance_id


def _stats(filtered: list[tuple[VideoAnnotation, str]]) -> dict:
    frames = [frame for video, _ in filtered for frame in video.frames]
    instance_total = sum(len(frame.instances) for frame in frames)
    return {
        "video_count": len(filtered),
        "class_count": len({cls for _, cls in filtered}),
        "mean_instances_per_frame": (
            instance_total / len(frames) if frames else 0.0
        ),
    }


def sample_splits(
    filtered: list[tuple[VideoAnnotation, str]],
    task: str,
    seed: int,
    gallery_mode: str = "disjoint",
) -> BenchmarkManifest:
    """Build the split manifest for one task.

    retrieval / image_seg: three frames are drawn per video without
    replacement (first drawn is the query; the other two are that query's
    only positives / eval frames). Videos with fewer than three kept frames
    are excluded with a warning. The target instance is the largest-area
    instance of the video's class in the query frame (ties: smallest
    instance_id).

    video_prop: the first kept frame is the reference and the rest evaluate;
    videos with fewer than two kept frames are excluded.

    Retrieval gallery composition: "disjoint" pools the two non-query frames
    of every video; "inclusive" pools all three selected frames (each query
    is excluded from its own gallery at evaluation time).
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if gallery_mode not in GALLERY_MODES:
        raise ValueError(f"gallery_mode must be one of {GALLERY_MODES}")

    entries = []
    gallery = []
    excluded = []
    sampled = []
    for video, class_name in filtered:
        if task in ("retrieval", "image_seg"):
            if len(video.frames) < 3:
                logger.warning("excluding video %s: %d kept frames (< 3)",
                               video.video_id, len(video.frames))
                excluded.append({"video_id": video.video_id,
                                 "reason": "fewer than 3 kept frames"})
                continue
            stream = video_stream(seed, video.video_id)
            drawn = stream.sample(video.frames, 3)
            query_frame, others = drawn[0], drawn[1:]
            other_ids = [_image_id(video.video_id, f.frame_id) for f in others]
            entries.append(ManifestEntry(
                video_id=video.video_id,
                class_name=class_name,
                target_instance_id=_pick_target_instance(query_frame, class_name),
                query=_image_id(video.video_id, query_frame.frame_id),
                positives=sorted(other_ids),
            ))
            pool = others if (task == "image_seg" or gallery_mode == "disjoint") \
                else drawn
            for frame in pool:
                gallery.append({
                    "image_id": _image_id(video.video_id, frame.frame_id),
                    "video_id": video.video_id,
                    "frame_id": frame.frame_id,
                })
        else:
            if len(video.frames) < 2:
                logger.warning("excluding video %s: %d kept frames (< 2)",
                               video.video_id, len(video.frames))
                excluded.append({"video_id": video.video_id,
                                 "reason": "fewer than 2 kept frames"})
                continue
            reference, rest = video.frames[0], video.frames[1:]
            rest_ids = [_image_id(video.video_id, f.frame_id) for f in rest]
            entries.append(ManifestEntry(
                video_id=video.video_id,
                class_name=class_name,
                target_instance_id=_pick_target_instance(reference, class_name),
                query=_image_id(video.video_id, reference.frame_id),
                positives=rest_ids,
            ))
            for frame in rest:
                gallery.append({
                    "image_id": _image_id(video.video_id, frame.frame_id),
                    "video_id": video.video_id,
                    "frame_id": frame.frame_id,
                })
        sampled.append((video, class_name))

    gallery.sort(key=lambda item: item["image_id"])
    return BenchmarkManifest(
        task=task,
        seed=seed,
        entries=entries,
        gallery=gallery,
        stats=_stats(sampled),
        gallery_mode=gallery_mode if task == "retrieval" else "disjoint",
        excluded=excluded,
    )


def build_manifest(source, task: str, seed: int,
                   gallery_mode: str = "disjoint") -> BenchmarkManifest:
    """parse -> filter -> sample, in one call."""
    videos = parse_annotations(source)
    filtered = filter_multi_instance(videos)
    return sample_splits(filtered, task, seed, gallery_mode)


def save_manifest(manifest: BenchmarkManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(path) -> BenchmarkManifest:
    with open(path) as fh:
        return BenchmarkManifest.from_dict(json.load(fh))
