"""Tiny latent-diffusion model with the standard U-Net block structure.

Each U-Net layer is the usual triple (residual block, self-attention,
cross-attention); the cross-attention queries come from the spatial
features while keys/values are projected text-token embeddings. The
default registry entry "tiny-latent-v1" is a deterministic random-weight
instantiation of this architecture: small enough to run on CPU, wide
enough (d = 64) to produce usable feature maps. Real checkpoints can be
registered by id without touching the extraction code.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
from torch import nn

LATENT_CHANNELS = 4
DOWNSAMPLE_FACTOR = 16
TEXT_WIDTH = 64
BASE_CHANNELS = 64
TIME_DIM = 128


def _seed_from(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


class TextEncoder:
    """Deterministic pseudo-embeddings: one vector per whitespace token.

    Token embeddings are drawn from a PRNG keyed on the token text, so the
    same token always maps to the same vector on every platform. An empty
    prompt maps to the single null token "".
    """

    def __init__(self, width: int = TEXT_WIDTH):
        self.width = width

    def tokenize(self, prompt: str) -> list[str]:
        tokens = prompt.strip().lower().split()
        return tokens if tokens else [""]

    def embed(self, prompt: str) -> torch.Tensor:
        rows = []
        for token in self.tokenize(prompt):
            gen = np.random.Generator(np.random.PCG64(_seed_from("tok:" + token)))
            rows.append(gen.standard_normal(self.width) / math.sqrt(self.width))
        return torch.tensor(np.stack(rows), dtype=torch.float32).unsqueeze(0)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half
    )
    args = t.float().reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(TIME_DIM, out_channels)
        self.norm2 = nn.GroupNorm(8, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (nn.Conv2d(in_channels, out_channels, 1)
                     if in_channels != out_channels else nn.Identity())

    def forward(self, x, t_emb):
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Spatial self-attention; to_q/to_k/to_v run at the concatenated
    multi-head width, so hooking them yields the full-width Q/K tensors."""

    def __init__(self, channels, heads=4):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def _attend(self, q, k, v):
        b, n, c = q.shape
        m = k.shape[1]
        head_dim = c // self.heads
        q = q.reshape(b, n, self.heads, head_dim).transpose(1, 2)
        k = k.reshape(b, m, self.heads, head_dim).transpose(1, 2)
        v = v.reshape(b, m, self.heads, head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(head_dim), -1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.to_out(out)

    def forward(self, x):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out = self._attend(self.to_q(tokens), self.to_k(tokens),
                           self.to_v(tokens))
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class CrossAttention(nn.Module):
    """Queries from spatial features, keys/values from text tokens."""

    def __init__(self, channels, context_width=TEXT_WIDTH, heads=4):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_width, channels, bias=False)
        self.to_v = nn.Linear(context_width, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x, context):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        q = self.to_q(tokens)
        k = self.to_k(context)
        v = self.to_v(context)
        head_dim = c // self.heads
        n, m = q.shape[1], k.shape[1]
        qh = q.reshape(b, n, self.heads, head_dim).transpose(1, 2)
        kh = k.reshape(b, m, self.heads, head_dim).transpose(1, 2)
        vh = v.reshape(b, m, self.heads, head_dim).transpose(1, 2)
        attn = torch.softmax(qh @ kh.transpose(-1, -2) / math.sqrt(head_dim), -1)
        out = (attn @ vh).transpose(1, 2).reshape(b, n, c)
        return x + self.to_out(out).transpose(1, 2).reshape(b, c, h, w)


class UNetLayer(nn.Module):
    """One U-Net layer: residual block, self-attention, cross-attention."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.res = ResidualBlock(in_channels, out_channels)
        self.attn_self = SelfAttention(out_channels)
        self.attn_cross = CrossAttention(out_channels)

    def forward(self, x, t_emb, context):
        x = self.res(x, t_emb)
        x = self.attn_self(x)
        return self.attn_cross(x, context)


class TinyUNet(nn.Module):
    """Two-level encoder/decoder with a middle layer; additive skips."""

    def __init__(self):
        super().__init__()
        c0, c1 = BASE_CHANNELS, BASE_CHANNELS * 2
        self.time_mlp = nn.Sequential(
            nn.Linear(TIME_DIM, TIME_DIM), nn.SiLU(),
            nn.Linear(TIME_DIM, TIME_DIM),
        )
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, c0, 3, padding=1)
        self.encoder = nn.ModuleList([UNetLayer(c0, c0), UNetLayer(c1, c1)])
        self.down = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.mid = UNetLayer(c1, c1)
        self.up = nn.ConvTranspose2d(c1, c0, 2, stride=2)
        self.decoder = nn.ModuleList([UNetLayer(c1, c1), UNetLayer(c0, c0)])
        self.conv_out = nn.Conv2d(c0, LATENT_CHANNELS, 3, padding=1)

    def forward(self, z, t, context):
        t_emb = self.time_mlp(timestep_embedding(t, TIME_DIM))
        h0 = self.encoder[0](self.conv_in(z), t_emb, context)
        h1 = self.encoder[1](self.down(h0), t_emb, context)
        m = self.mid(h1, t_emb, context)
        d1 = self.decoder[0](m + h1, t_emb, context)
        d0 = self.decoder[1](self.up(d1) + h0, t_emb, context)
        return self.conv_out(d0)


class ImageEncoder(nn.Module):
    """Strided-conv stand-in for the VAE encoder: pixels -> 4-ch latent."""

    def __init__(self):
        super().__init__()
        widths = [3, 16, 32, 64, LATENT_CHANNELS]
        layers = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            layers.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            layers.append(nn.SiLU())
        self.net = nn.Sequential(*layers[:-1])  # no activation on the latent

    def forward(self, image):
        return self.net(image)


class LatentDiffusionModel:
    """Bundle of image encoder, denoising U-Net and text encoder."""

    def __init__(self, seed: int):
        torch.manual_seed(seed)
        self.image_encoder = ImageEncoder().eval()
        self.unet = TinyUNet().eval()
        self.text = TextEncoder()
        for p in self.image_encoder.parameters():
            p.requires_grad_(False)
        for p in self.unet.parameters():
            p.requires_grad_(False)

    @property
    def feature_width(self) -> int:
        return BASE_CHANNELS


MODEL_REGISTRY = {
    "tiny-latent-v1": lambda: LatentDiffusionModel(_seed_from("tiny-latent-v1")),
}


def load_model(model_id: str) -> LatentDiffusionModel:
    if model_id not in MODEL_REGISTRY:
        raise ValueError(
            f"unknown model id {model_id!r}; registered: "
            f"{sorted(MODEL_REGISTRY)}"
        )
    return MODEL_REGISTRY[model_id]()
