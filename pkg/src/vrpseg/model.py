"""End-to-end pipeline: frozen encoder -> VRP encoder -> frozen decoder stub."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import EncoderConfig, ToyEncoder
from .errors import ClassMismatch
from .samstub import DecoderConfig, DecoderStub
from .vrp import VRPConfig, VRPEncoder


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vrp: VRPConfig = field(default_factory=VRPConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


@dataclass
class Batch:
    ref_images: torch.Tensor  # B x 3 x H x W
    annotations: torch.Tensor  # B x H x W
    tgt_images: torch.Tensor
    tgt_gt: torch.Tensor

    def to(self, dtype) -> "Batch":
        return Batch(*(t.to(dtype) for t in (self.ref_images, self.annotations, self.tgt_images, self.tgt_gt)))

    def __len__(self) -> int:
        return self.ref_images.shape[0]


def _chw(image) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float32).permute(2, 0, 1)


def collate(episodes) -> Batch:
    return Batch(
        ref_images=torch.stack([_chw(e.ref_image) for e in episodes]),
        annotations=torch.stack([torch.as_tensor(e.annotation.raster, dtype=torch.float32) for e in episodes]),
        tgt_images=torch.stack([_chw(e.tgt_image) for e in episodes]),
        tgt_gt=torch.stack([torch.as_tensor(e.tgt_gt, dtype=torch.float32) for e in episodes]),
    )


class VRPSegModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        if cfg.vrp.dim != cfg.decoder.dim:
            raise ValueError(f"prompt dim {cfg.vrp.dim} must equal decoder dim {cfg.decoder.dim}")
        self.backbone = ToyEncoder(cfg.encoder)
        self.vrp = VRPEncoder(cfg.encoder.mid_channels, cfg.vrp)
        self.decoder = DecoderStub(cfg.decoder)

    def train(self, mode: bool = True):
        super().train(mode)
        # frozen parts override their own mode
        self.backbone.train(mode)
        self.decoder.train(mode)
        return self

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [("vrp." + n, p) for n, p in self.vrp.trainable_parameters()]

    def frozen_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [("backbone." + n, p) for n, p in self.backbone.named_tensors()] + [
            ("decoder." + n, p) for n, p in self.decoder.named_tensors()
        ]

    def prompts(self, ref_images, annotations, tgt_images) -> torch.Tensor:
        """``B x N x C`` visual reference prompt embeddings."""
        with torch.no_grad():
            ref_taps = self.backbone(ref_images)
            tgt_taps = self.backbone(tgt_images)
        return self.vrp(ref_taps, tgt_taps, annotations)

    def forward(self, ref_images, annotations, tgt_images) -> torch.Tensor:
        prompts = self.prompts(ref_images, annotations, tgt_images)
        with torch.no_grad():
            embedding = self.decoder.embed_image(tgt_images)
        return self.decoder.decode(embedding, prompts)

    def forward_batch(self, batch: Batch) -> torch.Tensor:
        return self(batch.ref_images, batch.annotations, batch.tgt_images)

    def multi_vrp_prompts(self, episodes) -> tuple[torch.Tensor, "Batch"]:
        """``1 x (K*N) x C`` prompt rows from K references that share one target."""
        if not episodes:
            raise ValueError("need at least one reference episode")
        first = episodes[0]
        for e in episodes[1:]:
            if e.class_id != first.class_id:
                raise ClassMismatch(f"reference class {e.class_id} differs from target class {first.class_id}")
            if e.tgt_index != first.tgt_index:
                raise ClassMismatch("all references must share one target image")
        dtype = self.decoder.patch_embed.weight.dtype
        batch = collate(episodes).to(dtype)
        prompts = self.prompts(batch.ref_images, batch.annotations, batch.tgt_images)
        return prompts.reshape(1, -1, prompts.shape[-1]), batch

    def multi_vrp_logits(self, episodes) -> torch.Tensor:
        """Decode one target from several references by concatenating their prompt sets."""
        stacked, batch = self.multi_vrp_prompts(episodes)
        with torch.no_grad():
            embedding = self.decoder.embed_image(batch.tgt_images[:1])
        return self.decoder.decode(embedding, stacked)[0]
