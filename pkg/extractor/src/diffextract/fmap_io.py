"""FMAP v1 writer/reader, implemented against the published byte layout.

This is an independent implementation of the interchange format the
matching engine consumes; the two sides share only the layout:

    magic "FMAP" | version u16=1 | image_id (u32 len + UTF-8)
    | class_name (u32 len + UTF-8) | layer_tag (u32 len + UTF-8)
    | timestep u32 | source_height u32 | source_width u32
    | h u32 | w u32 | d u32
    | appearance f32[h*w*d] | semantic f32[h*w*d] | class_token f32[d]

All integers and floats little-endian; tensors row-major (y, x, channel).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FMAP"
VERSION = 1


@dataclass
class Bundle:
    image_id: str
    class_name: str
    appearance: np.ndarray      # (h, w, d) float32
    semantic: np.ndarray        # (h, w, d) float32
    class_token: np.ndarray     # (d,) float32
    timestep: int
    layer_tag: str
    source_height: int
    source_width: int


def _string(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_bundle(bundle: Bundle, path) -> None:
    app = np.ascontiguousarray(bundle.appearance, dtype="<f4")
    sem = np.ascontiguousarray(bundle.semantic, dtype="<f4")
    token = np.ascontiguousarray(bundle.class_token, dtype="<f4")
    if app.ndim != 3 or sem.shape != app.shape or token.shape != (app.shape[2],):
        raise ValueError(
            f"inconsistent tensor shapes: appearance {app.shape}, "
            f"semantic {sem.shape}, token {token.shape}"
        )
    if not (np.isfinite(app).all() and np.isfinite(sem).all()
            and np.isfinite(token).all()):
        raise ValueError("refusing to write non-finite features")
    h, w, d = app.shape
    blob = b"".join([
        MAGIC,
        struct.pack("<H", VERSION),
        _string(bundle.image_id),
        _string(bundle.class_name),
        _string(bundle.layer_tag),
        struct.pack("<6I", bundle.timestep, bundle.source_height,
                    bundle.source_width, h, w, d),
        app.tobytes(),
        sem.tobytes(),
        token.tobytes(),
    ])
    with open(path, "wb") as fh:
        fh.write(blob)


def read_bundle(path) -> Bundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise ValueError(f"truncated FMAP file {path}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ValueError(f"not an FMAP file: {path}")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise ValueError(f"unsupported FMAP version {version}")

    def string():
        (length,) = struct.unpack("<I", take(4))
        return bytes(take(length)).decode("utf-8")

    image_id = string()
    class_name = string()
    layer_tag = string()
    timestep, src_h, src_w, h, w, d = struct.unpack("<6I", take(24))

    def tensor(count):
        return np.frombuffer(take(4 * count), dtype="<f4").copy()

    return Bundle(
        image_id=image_id,
        class_name=class_name,
        appearance=tensor(h * w * d).reshape(h, w, d),
        semantic=tensor(h * w * d).reshape(h, w, d),
        class_token=tensor(d),
        timestep=timestep,
        layer_tag=layer_tag,
        source_height=src_h,
        source_width=src_w,
    )
