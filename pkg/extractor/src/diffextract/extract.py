"""End-to-end feature extraction: image -> inversion -> captured bundle."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .capture import AttentionCapture
from .fmap_io import Bundle, write_bundle
from .inversion import NoiseSchedule, invert_latent
from .model import DOWNSAMPLE_FACTOR, load_model


@dataclass
class ExtractionConfig:
    model: str = "tiny-latent-v1"
    num_inversion_steps: int = 4
    capture_step: int = 4            # 1..num_inversion_steps; stored as the
                                     # bundle's timestep
    capture_layer: str = "decoder.last"
    image_size: int = 512
    prompt_template: str = "{class_name}"   # set to "" for mask-driven runs

    def validate(self) -> None:
        if self.image_size < DOWNSAMPLE_FACTOR or \
                self.image_size % DOWNSAMPLE_FACTOR != 0:
            raise ValueError(
                f"image_size must be a positive multiple of "
                f"{DOWNSAMPLE_FACTOR}, got {self.image_size}"
            )
        if self.num_inversion_steps < 1:
            raise ValueError("num_inversion_steps must be >= 1")
        if not (1 <= self.capture_step <= self.num_inversion_steps):
            raise ValueError(
                f"capture_step must be in [1, {self.num_inversion_steps}]"
            )

    def prompt_for(self, class_name: str) -> str:
        return self.prompt_template.format(class_name=class_name)


@dataclass
class ExtractionResult:
    bundle: Bundle
    captures: dict    # q_sa / k_sa / q_ca as (h, w, d), token_keys as (n, d)
    trajectory: list


class FeatureExtractor:
    def __init__(self, config: ExtractionConfig | None = None):
        self.config = config or ExtractionConfig()
        self.config.validate()
        self.model = load_model(self.config.model)
        self.schedule = NoiseSchedule.ddpm()

    def load_image(self, path) -> torch.Tensor:
        """Decode, force RGB, resize to the configured square, map to [-1, 1]."""
        with Image.open(path) as img:
            img = img.convert("RGB").resize(
                (self.config.image_size, self.config.image_size),
                Image.BILINEAR,
            )
            array = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
        return torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0)

    @torch.no_grad()
    def invert_image(self, image: torch.Tensor, prompt: str) -> list[torch.Tensor]:
        """Latent trajectory of the image under the configured schedule."""
        context = self.model.text.embed(prompt)
        z0 = self.model.image_encoder(image)
        return invert_latent(self.model.unet, self.schedule, z0, context,
                             self.config.num_inversion_steps)

    @torch.no_grad()
    def extract(self, image: torch.Tensor, image_id: str,
                class_name: str) -> ExtractionResult:
        """One denoising step at the capture timestep, with hooks armed.

        The appearance map is the mean of the captured self-attention query
        and key projections; the semantic map is the cross-attention query
        projection; the class token is the mean key projection of the
        prompt's sub-tokens.
        """
        prompt = self.config.prompt_for(class_name)
        context = self.model.text.embed(prompt)
        trajectory = self.invert_image(image, prompt)

        z = trajectory[self.config.capture_step]
        index = self.schedule.timestep_indices(
            self.config.num_inversion_steps)[self.config.capture_step - 1]
        with AttentionCapture(self.model.unet, self.config.capture_layer) as cap:
            self.model.unet(z, torch.tensor([index]), context)
            grid = self.config.image_size // DOWNSAMPLE_FACTOR
            captures = cap.grids(grid, grid)
            resolved_tag = cap.layer_tag

        appearance = 0.5 * (captures["q_sa"] + captures["k_sa"])
        semantic = captures["q_ca"]
        class_token = captures["token_keys"].mean(axis=0).astype("float32")
        bundle = Bundle(
            image_id=image_id,
            class_name=class_name,
            appearance=appearance.astype("float32"),
            semantic=semantic,
            class_token=class_token,
            timestep=self.config.capture_step,
            layer_tag=f"{resolved_tag}.attn",
            source_height=self.config.image_size,
            source_width=self.config.image_size,
        )
        return ExtractionResult(bundle=bundle, captures=captures,
                                trajectory=trajectory)

    def extract_file(self, image_path, class_name: str, out_path,
                     image_id: str | None = None) -> Bundle:
        image_id = image_id or Path(image_path).stem
        image = self.load_image(image_path)
        result = self.extract(image, image_id, class_name)
        write_bundle(result.bundle, out_path)
        return result.bundle


def parse_config_file(path) -> ExtractionConfig:
    """Read ``key = value`` lines into an ExtractionConfig."""
    kinds = {f.name: f.type for f in fields(ExtractionConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            value = value.strip()
            values[key] = int(value) if kinds[key] == "int" else value
    config = ExtractionConfig(**values)
    config.validate()
    return config
