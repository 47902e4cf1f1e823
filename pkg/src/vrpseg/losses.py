"""BCE + squared-denominator Dice supervision."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .errors import NonBinaryGT, ShapeMismatch

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
LOSS_MODES = ("both", "bce", "dice")


@dataclass
class LossReport:
    bce: torch.Tensor
    dice: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("bce", "dice", "total")}


def bce_dice_loss(logits: torch.Tensor, gt: torch.Tensor, mode: str = "both") -> LossReport:
    """Per-image BCE and Dice, averaged over a leading batch dimension if present.

    ``total`` is ``bce + dice`` for ``mode="both"``; the single-term modes keep
    both numbers in the report but only one of them in ``total``.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"loss mode must be one of {LOSS_MODES}")
    gt = torch.as_tensor(gt)
    if logits.shape != gt.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs gt {tuple(gt.shape)}")
    if not bool(((gt == 0) | (gt == 1)).all()):
        raise NonBinaryGT("ground truth must contain only 0 and 1")
    y = gt.to(logits.dtype)
    if logits.dim() == 2:
        logits, y = logits[None], y[None]
    p = torch.sigmoid(logits)
    pc = p.clamp(PROB_EPS, 1 - PROB_EPS)
    bce = -(y * torch.log(pc) + (1 - y) * torch.log(1 - pc)).flatten(1).mean(dim=1)
    inter = (p * y).flatten(1).sum(dim=1)
    denom = (p * p).flatten(1).sum(dim=1) + (y * y).flatten(1).sum(dim=1)
    if bool((y.flatten(1).sum(dim=1) == 0).any()):
        log.warning("all-zero ground truth passed to the dice loss")
    dice = 1 - 2 * inter / denom
    bce, dice = bce.mean(), dice.mean()
    total = {"both": bce + dice, "bce": bce, "dice": dice}[mode]
    return LossReport(bce=bce, dice=dice, total=total)
