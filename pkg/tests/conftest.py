import sys
from pathlib import Path

import numpy as np
import pytest

from diffmatch.fmap import FeatureBundle

sys.path.insert(0, str(Path(__file__).parent))


def random_bundle(rng, h=4, w=4, d=8, image_id="img", class_name="dog",
                  source=512):
    return FeatureBundle(
        image_id=image_id,
        class_name=class_name,
        appearance=rng.standard_normal((h, w, d)).astype(np.float32),
        semantic=rng.standard_normal((h, w, d)).astype(np.float32),
        class_token=rng.standard_normal(d).astype(np.float32),
        timestep=4,
        layer_tag="decoder.final.attn0",
        source_height=source,
        source_width=source,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CH_DOG, CH_CAT, CH_TEXA, CH_TEXB = 0, 1, 2, 3


def planted_bundle(image_id, regions, sem_pin=None, app_pin=None, d=4,
                   class_name="dog"):
    """8x8 bundle with hand-planted class/texture regions.

    ``regions`` is a list of (row_slice, col_slice, semantic_channel,
    appearance_channel); pins put a faint response at one background cell so
    score maps are never constant (a constant map min-max normalizes to all
    ones, which would swamp the global mean).
    """
    sem = np.zeros((8, 8, d), dtype=np.float32)
    app = np.zeros((8, 8, d), dtype=np.float32)
    for ys, xs, sem_ch, app_ch in regions:
        if sem_ch is not None:
            sem[ys, xs, sem_ch] = 6.0
        if app_ch is not None:
            app[ys, xs, app_ch] = 3.0
    if sem_pin is not None:
        sem[sem_pin[0], sem_pin[1], CH_DOG] = 0.4
    if app_pin is not None:
        app[app_pin[0], app_pin[1], CH_TEXA] = 0.5
    token = np.zeros(d, dtype=np.float32)
    token[CH_DOG] = 1.0
    return FeatureBundle(
        image_id=image_id, class_name=class_name, appearance=app,
        semantic=sem, class_token=token, timestep=4,
        layer_tag="decoder.final.attn0", source_height=512, source_width=512)


def discrimination_fixture():
    """Reference + six targets where appearance and semantic cues conflict.

    The true instance (same class, same texture) wins only when both cues
    are fused: a larger same-class instance with a different texture wins on
    semantics alone, and a larger same-texture instance of another class
    wins on appearance alone.
    """
    dog_texa = (slice(2, 4), slice(2, 7), CH_DOG, CH_TEXA)
    big_dog_texb = (slice(2, 6), slice(2, 6), CH_DOG, CH_TEXB)
    big_cat_texa = (slice(2, 6), slice(2, 6), CH_CAT, CH_TEXA)
    reference = planted_bundle("ref", [dog_texa])
    targets = {
        "true": planted_bundle("true", [dog_texa], (7, 0), (7, 7)),
        "dog-texB": planted_bundle("dog-texB", [big_dog_texb], (7, 0), (7, 7)),
        "cat-texA": planted_bundle("cat-texA", [big_cat_texa], (7, 0), (7, 7)),
        "bg1": planted_bundle("bg1", [], (7, 0), (7, 7)),
        "bg2": planted_bundle("bg2", [], (6, 0), (6, 7)),
        "bg3": planted_bundle("bg3", [], (5, 0), (5, 7)),
    }
    return reference, targets


def make_instance(instance_id, class_name, area=None, mask=None):
    inst = {"instance_id": instance_id, "class_name": class_name}
    if area is not None:
        inst["area"] = area
    if mask is not None:
        inst["mask"] = mask
    return inst


def make_multi_instance_doc(num_videos=4, frames_per_video=5, class_name="dog",
                            extra_instances=0):
    """Synthetic annotation document where every frame of every video holds
    two (plus ``extra_instances``) co-present instances of one class."""
    videos = []
    for v in range(num_videos):
        frames = []
        for f in range(frames_per_video):
            instances = [
                make_instance("i1", class_name, area=100.0 + f),
                make_instance("i2", class_name, area=50.0),
            ]
            for k in range(extra_instances):
                instances.append(make_instance(f"x{k}", "background", area=5.0))
            frames.append({"frame_id": f"f{f:03d}", "instances": instances})
        videos.append({"video_id": f"v{v:03d}", "frames": frames})
    return {"videos": videos}
