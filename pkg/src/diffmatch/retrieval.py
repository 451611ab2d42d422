"""Personalized retrieval: global-score ranking of a gallery and re-ranking.

Gallery items are streamed one at a time (load, score, release) so large
galleries run in bounded memory. Ordering is deterministic: descending
score, ties broken by image_id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .fmap import FeatureBundle, FmapError, load_fmap
from .matching import MatchOptions, match

logger = logging.getLogger(__name__)

PROVENANCES = ("engine", "external", "reranked")
DEFAULT_RERANK_TOPK = 400


@dataclass
class RankedList:
    """Ordered (image_id, score) pairs with a provenance tag."""

    entries: list[tuple[str, float]]
    provenance: str = "engine"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        ids = [image_id for image_id, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("ranking contains duplicate image ids")

    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.entries]


@dataclass
class GalleryEntry:
    image_id: str
    path: Path
    global_score: float | None = None


@dataclass
class GalleryManifest:
    """Gallery listing: image ids, FMAP paths, optional external scores."""

    entries: list[GalleryEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("gallery manifest contains duplicate image ids")

    def by_id(self) -> dict[str, GalleryEntry]:
        return {e.image_id: e for e in self.entries}


def load_manifest(path) -> GalleryManifest:
    """Read a JSON manifest: [{"image_id", "path", "global_score"?}, ...].

    Relative paths resolve against the manifest's directory; every path must
    exist at load time.
    """
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("gallery manifest must be a JSON list")
    entries = []
    for i, item in enumerate(raw):
        try:
            image_id = str(item["image_id"])
            fmap_path = Path(item["path"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"manifest entry {i} missing image_id/path") from exc
        if not fmap_path.is_absolute():
            fmap_path = path.parent / fmap_path
        if not fmap_path.exists():
            raise ValueError(f"manifest entry {image_id}: no such file {fmap_path}")
        score = item.get("global_score")
        entries.append(GalleryEntry(
            image_id=image_id,
            path=fmap_path,
            global_score=None if score is None else float(score),
        ))
    return GalleryManifest(entries=entries)


def external_ranking(gallery: GalleryManifest) -> RankedList:
    """Ranking built from the manifest's external global scores."""
    missing = [e.image_id for e in gallery.entries if e.global_score is None]
    if missing:
        raise ValueError(
            f"{len(missing)} gallery entries have no external global_score "
            f"(first: {missing[0]})"
        )
    ordered = sorted(gallery.entries, key=lambda e: (-e.global_score, e.image_id))
    return RankedList(
        entries=[(e.image_id, e.global_score) for e in ordered],
        provenance="external",
    )


def _sorted_entries(scored: list[tuple[str, float]]) -> list[tuple[str, float]]:
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


def score_gallery(
    query: FeatureBundle,
    gallery: GalleryManifest,
    options: MatchOptions | None = None,
) -> RankedList:
    """Rank every gallery item by its global match score against the query.

    Unreadable or incompatible items are dropped with a warning so one bad
    file cannot sink a whole run; an empty or fully-dropped gallery is an
    error.
    """
    if not gallery.entries:
        raise ValueError("gallery is empty")
    options = options or MatchOptions()
    scored = []
    for entry in gallery.entries:
        try:
            bundle = load_fmap(entry.path)
            result = match(query, bundle, options)
        except (FmapError, OSError, ValueError) as exc:
            logger.warning("skipping gallery item %s (%s): %s",
                           entry.image_id, entry.path, exc)
            continue
        scored.append((entry.image_id, result.global_score))
    if not scored:
        raise ValueError("no gallery item could be scored")
    return RankedList(entries=_sorted_entries(scored), provenance="engine")


def rerank(
    initial: RankedList,
    query: FeatureBundle,
    gallery: GalleryManifest,
    k: int = DEFAULT_RERANK_TOPK,
    options: MatchOptions | None = None,
) -> RankedList:
    """Re-score the top-k of ``initial`` with the matching pipeline.

    Only the first min(k, len) entries are re-ordered (among themselves);
    the tail keeps its original order and scores. Membership never changes,
    so a bad file inside the prefix is an error rather than a drop.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    options = options or MatchOptions()
    by_id = gallery.by_id()
    missing = [image_id for image_id in initial.ids() if image_id not in by_id]
    if missing:
        raise ValueError(
            f"{len(missing)} ranked ids missing from gallery (first: {missing[0]})"
        )
    cut = min(k, len(initial.entries))
    head, tail = initial.entries[:cut], initial.entries[cut:]
    rescored = []
    for image_id, _ in head:
        bundle = load_fmap(by_id[image_id].path)
        result = match(query, bundle, options)
        rescored.append((image_id, result.global_score))
    return RankedList(
        entries=_sorted_entries(rescored) + list(tail),
        provenance="reranked",
    )


# ---------------------------------------------------------------------------
# Ranking file I/O (JSON and TSV)
# ---------------------------------------------------------------------------


def save_ranking(ranking: RankedList, path) -> None:
    path = Path(path)
    if path.suffix == ".tsv":
        lines = ["rank\timage_id\tscore"]
        for rank, (image_id, score) in enumerate(ranking.entries, start=1):
            lines.append(f"{rank}\t{image_id}\t{score:.17g}")
        path.write_text("\n".join(lines) + "\n")
        return
    payload = {
        "provenance": ranking.provenance,
        "entries": [
            {"rank": rank, "image_id": image_id, "score": score}
            for rank, (image_id, score) in enumerate(ranking.entries, start=1)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_ranking(path) -> RankedList:
    path = Path(path)
    if path.suffix == ".tsv":
        entries = []
        lines = path.read_text().splitlines()
        for line in lines[1:]:
            if not line.strip():
                continue
            _, image_id, score = line.split("\t")
            entries.append((image_id, float(score)))
        return RankedList(entries=entries, provenance="external")
    with open(path) as fh:
        payload = json.load(fh)
    entries = [(item["image_id"], float(item["score"]))
               for item in payload["entries"]]
    return RankedList(
        entries=entries,
        provenance=payload.get("provenance", "external"),
    )
