"""Frozen image encoder with a mid-level and a high-level feature tap.

The default is a small randomly initialised CNN; anything implementing
``forward(images) -> EncoderTaps`` with the same tap ratios can replace it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadShape


class EncoderTaps(NamedTuple):
    mid: torch.Tensor
    high: torch.Tensor


@dataclass
class EncoderConfig:
    channels: tuple[int, ...] = (16, 32, 64, 64)
    mid_ratio: int = 8
    high_ratio: int = 16
    seed: int = 0
    frozen: bool = True

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != 4:
            raise ValueError("the toy encoder has exactly 4 stages")

    @property
    def mid_channels(self) -> int:
        return self.channels[2] + self.channels[3]

    @property
    def high_channels(self) -> int:
        return self.channels[3]


def seeded_init(module: nn.Module, seed: int) -> None:
    """Re-initialise every conv/linear weight of ``module`` from ``seed``.

    Convolutions get He-normal weights, linear layers ``N(0, 1/fan_in)``; biases are zeroed.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.ConvTranspose2d):
            fan_in, gain = m.weight.shape[0] * m.weight[0, 0].numel(), 2.0
        elif isinstance(m, nn.Conv2d):
            fan_in, gain = m.weight[0].numel(), 2.0
        elif isinstance(m, nn.Linear):
            fan_in, gain = m.weight.shape[1], 1.0
        else:
            continue
        with torch.no_grad():
            m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (gain / fan_in) ** 0.5)
            if m.bias is not None:
                m.bias.zero_()


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


class ToyEncoder(nn.Module):
    """Four stride-2 conv stages; mid tap = stage 3 + upsampled stage 4, high tap = stage 4."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        chans = (3,) + self.config.channels
        self.stages = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], kernel_size=3, stride=2, padding=1) for i in range(4)
        )
        seeded_init(self, self.config.seed)
        if self.config.frozen:
            freeze(self)

    def train(self, mode: bool = True):
        # frozen encoders never switch to training mode
        return super().train(mode and not self.config.frozen)

    def forward(self, images: torch.Tensor) -> EncoderTaps:
        if images.dim() != 4 or images.shape[1] != 3:
            raise BadShape(f"expected B x 3 x H x W images, got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if h % self.config.high_ratio or w % self.config.high_ratio:
            raise BadShape(f"image size {h}x{w} must be divisible by {self.config.high_ratio}")
        x = images - 0.5
        outs = []
        for conv in self.stages:
            x = F.relu(conv(x))
            outs.append(x)
        s3, s4 = outs[2], outs[3]
        mid = torch.cat([s3, F.interpolate(s4, size=s3.shape[-2:], mode="nearest")], dim=1)
        return EncoderTaps(mid=mid, high=s4)

    def encode(self, image) -> EncoderTaps:
        """Encode one ``H x W x 3`` image with values in [0, 1]."""
        arr = torch.as_tensor(np.asarray(image), dtype=self.stages[0].weight.dtype)
        if arr.dim() != 3 or arr.shape[-1] != 3:
            raise BadShape(f"expected H x W x 3 image, got {tuple(arr.shape)}")
        with torch.no_grad():
            taps = self(arr.permute(2, 0, 1)[None])
        return EncoderTaps(taps.mid[0], taps.high[0])

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        return list(self.named_parameters())
