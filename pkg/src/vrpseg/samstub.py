"""A small, frozen, SAM-style mask decoder plus its geometric prompt embedder.

Topology follows SAM's decoder at toy size: a frozen patch encoder produces the
target image embedding, one two-way attention block mixes prompt tokens with
image tokens, and a two-layer transposed-conv head upsamples to input resolution.
Shallow half- and full-resolution image features are added inside the head so
that fine boundaries survive the 4x4 patching. Mask logits are the dot product
of upsampled pixel features with a vector computed from the mean prompt token,
so decoding is invariant to the order of prompt rows and to repeating every row
the same number of times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import freeze, seeded_init
from .errors import EmptyAfterThreshold, OutOfBounds, ShapeMismatch
from .prompts import BoxSpec, bounding_box
from .vrp import Attention

GP_KINDS = ("points", "box", "points_and_box")
GP_THRESHOLD = 0.5
GP_POINTS = 5


@dataclass
class DecoderConfig:
    dim: int = 64
    heads: int = 4
    patch: int = 4
    hires_skip: bool = True
    logit_scale: float = 1.0
    seed: int = 2
    frozen: bool = True


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class RandomFourierPE(nn.Module):
    """Positional encoding of normalised (x, y) coordinates via a fixed Gaussian projection."""

    def __init__(self, dim: int, seed: int):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.gaussian = nn.Parameter(torch.randn(2, dim // 2, generator=gen), requires_grad=False)

    def encode(self, xy: torch.Tensor) -> torch.Tensor:
        """``xy`` in [0, 1], shape ``... x 2`` (x = column, y = row)."""
        proj = (2 * xy.to(self.gaussian.dtype) - 1) @ self.gaussian * (2 * math.pi)
        return torch.cat([proj.sin(), proj.cos()], dim=-1)

    def grid(self, h: int, w: int) -> torch.Tensor:
        ys = (torch.arange(h, dtype=self.gaussian.dtype) + 0.5) / h
        xs = (torch.arange(w, dtype=self.gaussian.dtype) + 0.5) / w
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        return self.encode(torch.stack([xx, yy], dim=-1)).reshape(h * w, -1)


@dataclass
class GeometricPrompt:
    kind: str
    points: list[tuple[int, int]] = field(default_factory=list)
    box: BoxSpec | None = None

    def __post_init__(self):
        if self.kind not in GP_KINDS:
            raise ValueError(f"unknown geometric prompt kind {self.kind!r}")
        if "points" in self.kind and not self.points:
            raise ValueError(f"kind {self.kind} needs at least one point")
        if "box" in self.kind and self.box is None:
            raise ValueError(f"kind {self.kind} needs a box")


class ImageEmbedding(NamedTuple):
    """Decoder image features: the dense patch embedding plus optional high-res skips."""

    dense: torch.Tensor
    half: torch.Tensor | None = None
    full: torch.Tensor | None = None

    def unbatched_to_batched(self) -> "ImageEmbedding":
        return ImageEmbedding(*(None if t is None else t[None] for t in self))


class DecoderStub(nn.Module):
    def __init__(self, config: DecoderConfig | None = None):
        super().__init__()
        self.config = cfg = config or DecoderConfig()
        c = cfg.dim
        self.patch_embed = nn.Conv2d(3, c, kernel_size=cfg.patch, stride=cfg.patch)
        self.embed_conv = nn.Conv2d(c, c, kernel_size=3, padding=1)
        self.embed_norm = LayerNorm2d(c)
        self.pe = RandomFourierPE(c, cfg.seed + 1000)
        # two-way block
        self.token_self = Attention(c, cfg.heads)
        self.norm1 = nn.LayerNorm(c)
        self.token_to_image = Attention(c, cfg.heads)
        self.norm2 = nn.LayerNorm(c)
        self.mlp = nn.Sequential(nn.Linear(c, 2 * c), nn.ReLU(), nn.Linear(2 * c, c))
        self.norm3 = nn.LayerNorm(c)
        self.image_to_token = Attention(c, cfg.heads)
        self.norm4 = nn.LayerNorm(c)
        # upsampling head; two stride-2 layers give the 4x4 patch back
        self.up1 = nn.ConvTranspose2d(c, c // 2, kernel_size=2, stride=2)
        self.up_norm = LayerNorm2d(c // 2)
        self.up2 = nn.ConvTranspose2d(c // 2, c // 2, kernel_size=2, stride=2)
        # full- and half-resolution image features added inside the head
        self.skip_half = nn.Conv2d(3, c // 2, kernel_size=3, stride=2, padding=1)
        self.skip_full = nn.Conv2d(3, c // 2, kernel_size=3, padding=1)
        self.skip_half_norm = LayerNorm2d(c // 2)
        self.skip_full_norm = LayerNorm2d(c // 2)
        # linear so every readout direction is reachable from the prompt tokens
        self.hyper = nn.Linear(c, c // 2)
        # geometric prompt types: point, box top-left, box bottom-right
        self.type_embed = nn.Parameter(torch.zeros(3, c))
        seeded_init(self, cfg.seed)
        with torch.no_grad():
            gen = torch.Generator().manual_seed(cfg.seed + 2000)
            self.type_embed.copy_(torch.randn(3, c, generator=gen))
        if cfg.patch != 4:
            raise ValueError("the upsampling head restores exactly a 4x4 patch")
        if cfg.frozen:
            freeze(self)

    def train(self, mode: bool = True):
        return super().train(mode and not self.config.frozen)

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        return list(self.named_parameters())

    def embed_image(self, images: torch.Tensor) -> ImageEmbedding:
        """``B x 3 x H x W`` images in [0, 1] -> ``B x C x H/4 x W/4`` embedding (+ skip features)."""
        x = images - 0.5
        h = F.gelu(self.patch_embed(x))
        embedding = self.embed_norm(h + self.embed_conv(h))
        if not self.config.hires_skip:
            return ImageEmbedding(embedding)
        half = self.skip_half_norm(self.skip_half(x))
        full = self.skip_full_norm(self.skip_full(x))
        return ImageEmbedding(embedding, half, full)

    def decode(self, image_embedding: torch.Tensor, prompts: torch.Tensor) -> torch.Tensor:
        """Mask logits ``B x 4h x 4w`` from ``B x C x h x w`` embeddings and ``B x N x C`` prompts."""
        if not isinstance(image_embedding, ImageEmbedding):
            image_embedding = ImageEmbedding(image_embedding)
        single = image_embedding.dense.dim() == 3
        if single:
            image_embedding = image_embedding.unbatched_to_batched()
            prompts = prompts[None]
        b, c, h, w = image_embedding.dense.shape
        if c != self.config.dim or prompts.shape[-1] != c:
            raise ShapeMismatch(f"decoder dim {self.config.dim}, got image {c} / prompts {prompts.shape[-1]}")
        if prompts.dim() != 3 or prompts.shape[0] != b or prompts.shape[1] < 1:
            raise ShapeMismatch(f"prompts must be B x N x C with N >= 1, got {tuple(prompts.shape)}")
        image = image_embedding.dense.flatten(2).transpose(1, 2)
        pos = self.pe.grid(h, w).to(image.dtype)[None]
        tokens = self.norm1(prompts + self.token_self(prompts, prompts, prompts))
        tokens = self.norm2(tokens + self.token_to_image(tokens, image + pos, image))
        tokens = self.norm3(tokens + self.mlp(tokens))
        image = self.norm4(image + self.image_to_token(image + pos, tokens, tokens))
        image = image.transpose(1, 2).reshape(b, c, h, w)
        up = self.up_norm(self.up1(image))
        if image_embedding.half is not None:
            up = up + image_embedding.half
        up = self.up2(F.gelu(up))
        if image_embedding.full is not None:
            up = up + image_embedding.full
        up = F.gelu(up)
        weights = self.hyper(tokens.mean(dim=1))
        logits = self.config.logit_scale * torch.einsum("bchw,bc->bhw", up, weights)
        return logits[0] if single else logits

    def forward(self, images: torch.Tensor, prompts: torch.Tensor) -> torch.Tensor:
        return self.decode(self.embed_image(images), prompts)

    def embed_geometric(self, prompt: GeometricPrompt, image_size: tuple[int, int]) -> torch.Tensor:
        """Rows: one per point, then two per box (top-left and bottom-right corners)."""
        h, w = image_size
        coords, types = [], []
        for r, c in prompt.points if "points" in prompt.kind else []:
            coords.append((r, c))
            types.append(0)
        if "box" in prompt.kind:
            b = prompt.box
            coords += [(b.row_min, b.col_min), (b.row_max, b.col_max)]
            types += [1, 2]
        for r, c in coords:
            if not (0 <= r < h and 0 <= c < w):
                raise OutOfBounds(f"coordinate ({r}, {c}) outside {h}x{w} image")
        rc = torch.tensor(coords, dtype=self.type_embed.dtype)
        xy = torch.stack([(rc[:, 1] + 0.5) / w, (rc[:, 0] + 0.5) / h], dim=-1)
        return self.pe.encode(xy) + self.type_embed[torch.tensor(types)]


def gp_prompts_from_pseudo_mask(
    pm, kind: str, seed: int, threshold: float = GP_THRESHOLD, n_points: int = GP_POINTS
) -> GeometricPrompt:
    """Geometric prompts sampled from the thresholded pseudo-mask ``pm`` (H x W in [0, 1])."""
    if kind not in GP_KINDS:
        raise ValueError(f"unknown geometric prompt kind {kind!r}")
    region = np.asarray(pm.detach().cpu() if isinstance(pm, torch.Tensor) else pm) >= threshold
    if not region.any():
        raise EmptyAfterThreshold(f"no pseudo-mask pixel reaches {threshold}")
    points: list[tuple[int, int]] = []
    box = None
    if "points" in kind:
        fg = np.argwhere(region)
        rng = np.random.default_rng(seed)
        idx = rng.choice(fg.shape[0], size=n_points, replace=fg.shape[0] < n_points)
        points = [(int(fg[i, 0]), int(fg[i, 1])) for i in idx]
    if "box" in kind:
        box = bounding_box(region)
    return GeometricPrompt(kind, points, box)
