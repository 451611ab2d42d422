"""Feature data model and the FMAP binary interchange format.

A FeatureBundle carries one image's appearance features (h x w x d), semantic
features (h x w x d), the class-token vector (d,) and extraction metadata.
Bundles are exchanged between the extractor and this engine as FMAP files.

FMAP v1 layout (all integers little-endian):

    magic "FMAP" (4 bytes)
    version           u16 = 1
    image_id          u32 byte length + UTF-8 bytes
    class_name        u32 byte length + UTF-8 bytes
    layer_tag         u32 byte length + UTF-8 bytes
    timestep          u32
    source_height     u32
    source_width      u32
    h, w, d           u32 each
    appearance        h*w*d float32, row-major (y, x, channel)
    semantic          h*w*d float32, row-major (y, x, channel)
    class_token       d float32

Floats are IEEE-754 little-endian. Payloads round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

MAP_KINDS = ("appearance", "semantic", "fused", "normalized")


class FmapError(Exception):
    """Base class for FMAP read/write failures. ``code`` is machine-readable."""

    code = "fmap_error"


class InvalidBundleError(FmapError):
    """Bundle violates FeatureBundle invariants; nothing was written."""

    code = "invalid_bundle"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class BadMagicError(FmapError):
    code = "bad_magic"


class UnsupportedVersionError(FmapError):
    code = "unsupported_version"


class TruncatedStreamError(FmapError):
    code = "truncated"


class ShapeMismatchError(FmapError):
    code = "shape_mismatch"


@dataclass(eq=False)
class FeatureBundle:
    """One image's feature maps plus extraction metadata.

    Arrays are normalized to contiguous float32 on construction so that
    serialization is bit-exact. Immutable by convention: treat fields as
    read-only after construction.
    """

    image_id: str
    class_name: str
    appearance: np.ndarray
    semantic: np.ndarray
    class_token: np.ndarray
    timestep: int = 0
    layer_tag: str = ""
    source_height: int = 512
    source_width: int = 512

    def __post_init__(self):
        self.appearance = np.ascontiguousarray(self.appearance, dtype=np.float32)
        self.semantic = np.ascontiguousarray(self.semantic, dtype=np.float32)
        self.class_token = np.ascontiguousarray(self.class_token, dtype=np.float32)

    @property
    def shape(self):
        """(h, w, d) of the appearance map."""
        return tuple(self.appearance.shape)

    def __eq__(self, other):
        if not isinstance(other, FeatureBundle):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.class_name == other.class_name
            and self.timestep == other.timestep
            and self.layer_tag == other.layer_tag
            and self.source_height == other.source_height
            and self.source_width == other.source_width
            and self.appearance.shape == other.appearance.shape
            and self.semantic.shape == other.semantic.shape
            and self.class_token.shape == other.class_token.shape
            and np.array_equal(self.appearance, other.appearance)
            and np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.class_token, other.class_token)
        )


@dataclass(eq=False)
class ScoreMap:
    """An h x w real-valued similarity map.

    ``kind`` records where the map is in the pipeline: raw "appearance" or
    "semantic" scores, a min-max "normalized" map, or the "fused" output.
    Normalized and fused maps hold values in [0, 1].
    """

    values: np.ndarray
    kind: str = "appearance"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"score map must be 2-D, got shape {self.values.shape}")
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")

    @property
    def shape(self):
        return tuple(self.values.shape)


def validate_bundle(bundle: FeatureBundle) -> list[str]:
    """Check every FeatureBundle invariant; return one diagnostic per violation.

    An empty list means the bundle is valid and can be written and re-read.
    """
    diags = []
    app, sem, tok = bundle.appearance, bundle.semantic, bundle.class_token
    if app.ndim != 3:
        diags.append(f"appearance must be 3-D (h, w, d), got shape {app.shape}")
    if sem.ndim != 3:
        diags.append(f"semantic must be 3-D (h, w, d), got shape {sem.shape}")
    if tok.ndim != 1:
        diags.append(f"class_token must be 1-D, got shape {tok.shape}")
    if app.ndim == 3 and sem.ndim == 3 and app.shape != sem.shape:
        diags.append(f"appearance shape {app.shape} != semantic shape {sem.shape}")
    if app.ndim == 3:
        h, w, d = app.shape
        if min(h, w, d) < 1:
            diags.append(f"h, w, d must all be >= 1, got {(h, w, d)}")
        if tok.ndim == 1 and tok.shape[0] != d:
            diags.append(f"class_token length {tok.shape[0]} != feature dim {d}")
        if bundle.source_height < h:
            diags.append(f"source_height {bundle.source_height} < h {h}")
        if bundle.source_width < w:
            diags.append(f"source_width {bundle.source_width} < w {w}")
    if not np.isfinite(app).all():
        diags.append("appearance contains non-finite values")
    if not np.isfinite(sem).all():
        diags.append("semantic contains non-finite values")
    if not np.isfinite(tok).all():
        diags.append("class_token contains non-finite values")
    if bundle.timestep < 0 or bundle.timestep > 0xFFFFFFFF:
        diags.append(f"timestep {bundle.timestep} outside u32 range")
    if bundle.source_height < 1 or bundle.source_width < 1:
        diags.append(
            f"source size must be >= 1, got "
            f"{(bundle.source_height, bundle.source_width)}"
        )
    return diags


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_fmap(bundle: FeatureBundle, sink: BinaryIO) -> None:
    """Serialize ``bundle`` to ``sink`` in FMAP v1 layout.

    Deterministic: the same bundle always produces identical bytes. Invariant
    violations raise InvalidBundleError before any byte is written.
    """
    diags = validate_bundle(bundle)
    if diags:
        raise InvalidBundleError(diags)
    h, w, d = bundle.appearance.shape
    parts = [
        FMAP_MAGIC,
        struct.pack("<H", FMAP_VERSION),
        _pack_str(bundle.image_id),
        _pack_str(bundle.class_name),
        _pack_str(bundle.layer_tag),
        struct.pack("<6I", bundle.timestep, bundle.source_height,
                    bundle.source_width, h, w, d),
        bundle.appearance.astype("<f4", copy=False).tobytes(),
        bundle.semantic.astype("<f4", copy=False).tobytes(),
        bundle.class_token.astype("<f4", copy=False).tobytes(),
    ]
    sink.write(b"".join(parts))


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    raw = source.read(n)
    if len(raw) != n:
        raise TruncatedStreamError(
            f"stream ended inside {what}: wanted {n} bytes, got {len(raw)}"
        )
    return raw


def _read_str(source: BinaryIO, what: str) -> str:
    (length,) = struct.unpack("<I", _read_exact(source, 4, f"{what} length"))
    return _read_exact(source, length, what).decode("utf-8")


def read_fmap(source: BinaryIO) -> FeatureBundle:
    """Parse one FMAP v1 bundle from ``source``.

    Raises BadMagicError, UnsupportedVersionError, TruncatedStreamError or
    ShapeMismatchError; each carries a distinct ``code``.
    """
    magic = _read_exact(source, 4, "magic")
    if magic != FMAP_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<H", _read_exact(source, 2, "version"))
    if version != FMAP_VERSION:
        raise UnsupportedVersionError(f"unsupported FMAP version {version}")
    image_id = _read_str(source, "image_id")
    class_name = _read_str(source, "class_name")
    layer_tag = _read_str(source, "layer_tag")
    timestep, src_h, src_w, h, w, d = struct.unpack(
        "<6I", _read_exact(source, 24, "header")
    )
    if min(h, w, d) < 1:
        raise ShapeMismatchError(f"declared shape {(h, w, d)} has a zero dimension")
    if src_h < h or src_w < w:
        raise ShapeMismatchError(
            f"source size {(src_h, src_w)} smaller than feature grid {(h, w)}"
        )

    def read_f32(count, what):
        raw = _read_exact(source, 4 * count, what)
        return np.frombuffer(raw, dtype="<f4").reshape(-1).copy()

    appearance = read_f32(h * w * d, "appearance tensor").reshape(h, w, d)
    semantic = read_f32(h * w * d, "semantic tensor").reshape(h, w, d)
    class_token = read_f32(d, "class_token")
    return FeatureBundle(
        image_id=image_id,
        class_name=class_name,
        appearance=appearance,
        semantic=semantic,
        class_token=class_token,
        timestep=timestep,
        layer_tag=layer_tag,
        source_height=src_h,
        source_width=src_w,
    )


def save_fmap(bundle: FeatureBundle, path) -> None:
    with open(path, "wb") as fh:
        write_fmap(bundle, fh)


def load_fmap(path) -> FeatureBundle:
    with open(path, "rb") as fh:
        return read_fmap(fh)
