"""Visual reference prompt encoder: feature augmenter + two-stage prompt generator.

This module holds every trainable parameter of the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import maskops
from .backbone import EncoderTaps, seeded_init
from .errors import MissingPrototype, ShapeMismatch

INIT_MODES = ("random", "FP", "BP", "half_FP_half_BP")
QUERY_STD = 0.02


@dataclass
class VRPConfig:
    n_queries: int = 50
    dim: int = 64
    heads: int = 4
    positional_encoding: bool = True
    query_init: str = "random"
    seed: int = 1

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.query_init not in INIT_MODES:
            raise ValueError(f"query_init must be one of {INIT_MODES}")


def sine_position_encoding(h: int, w: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """2-D sinusoidal encoding, ``(h*w) x dim``; half the channels encode rows, half columns."""
    if dim % 4:
        raise ValueError("positional encoding dim must be divisible by 4")
    quarter = dim // 4
    freqs = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys = (torch.arange(h, dtype=torch.float64) + 0.5) / h * 2 * math.pi
    xs = (torch.arange(w, dtype=torch.float64) + 0.5) / w * 2 * math.pi
    ey = ys[:, None] * freqs[None] * 8
    ex = xs[:, None] * freqs[None] * 8
    row = torch.cat([ey.sin(), ey.cos()], dim=1)[:, None, :].expand(h, w, 2 * quarter)
    col = torch.cat([ex.sin(), ex.cos()], dim=1)[None, :, :].expand(h, w, 2 * quarter)
    return torch.cat([row, col], dim=-1).reshape(h * w, dim).to(dtype)


class Attention(nn.Module):
    """Multi-head attention that also returns its (B x heads x Nq x Nk) weights."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        return x.reshape(b, n, self.heads, c // self.heads).transpose(1, 2)

    def forward(self, q, k, v, return_weights: bool = False):
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k))
        vh = self._split(self.v_proj(v))
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(qh.shape[-1])
        weights = scores.softmax(dim=-1)
        out = (weights @ vh).transpose(1, 2).reshape(q.shape)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out


class CrossSelfStage(nn.Module):
    """Queries cross-attend to feature tokens, then self-attend; residual + LayerNorm after each."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.cross = Attention(dim, heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm_self = nn.LayerNorm(dim)

    def forward(self, queries, tokens, pos=None):
        keys = tokens if pos is None else tokens + pos
        queries = self.norm_cross(queries + self.cross(queries, keys, tokens))
        return self.norm_self(queries + self.self_attn(queries, queries, queries))


def init_queries(mode: str, n: int, dim: int, seed: int = 0, prototype_fg=None, prototype_bg=None) -> torch.Tensor:
    """Initial ``n x dim`` query rows for one of the four initialisation strategies."""
    if mode == "random":
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(n, dim, generator=gen) * QUERY_STD
    need_fg = mode in ("FP", "half_FP_half_BP")
    need_bg = mode in ("BP", "half_FP_half_BP")
    if mode not in INIT_MODES:
        raise ValueError(f"unknown query init mode {mode!r}")
    if need_fg and prototype_fg is None:
        raise MissingPrototype(f"mode {mode} needs a foreground prototype")
    if need_bg and prototype_bg is None:
        raise MissingPrototype(f"mode {mode} needs a background prototype")
    if mode == "FP":
        return torch.as_tensor(prototype_fg).expand(n, -1).clone()
    if mode == "BP":
        return torch.as_tensor(prototype_bg).expand(n, -1).clone()
    n_fg = math.ceil(n / 2)
    fg = torch.as_tensor(prototype_fg).expand(n_fg, -1)
    bg = torch.as_tensor(prototype_bg).expand(n - n_fg, -1)
    return torch.cat([fg, bg], dim=0)


class VRPEncoder(nn.Module):
    def __init__(self, mid_channels: int, config: VRPConfig | None = None):
        super().__init__()
        self.config = cfg = config or VRPConfig()
        self.mid_channels = mid_channels
        # shared by the reference and target branches
        self.augment_proj = nn.Conv2d(2 * mid_channels + 1, cfg.dim, kernel_size=1)
        self.stage_ref = CrossSelfStage(cfg.dim, cfg.heads)
        self.stage_tgt = CrossSelfStage(cfg.dim, cfg.heads)
        self.queries = nn.Parameter(torch.zeros(cfg.n_queries, cfg.dim))
        seeded_init(self, cfg.seed)
        with torch.no_grad():
            self.queries.copy_(init_queries("random", cfg.n_queries, cfg.dim, seed=cfg.seed))

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return list(self.named_parameters())

    def _project(self, feats, proto, mask):
        h, w = feats.shape[-2:]
        tiled = proto[:, :, None, None].expand(-1, -1, h, w)
        return self.augment_proj(torch.cat([feats, tiled, mask[:, None].to(feats.dtype)], dim=1))

    def augment(self, ref_taps: EncoderTaps, tgt_taps: EncoderTaps, annotation):
        """Enhanced reference/target features plus the intermediates used to build them.

        ``annotation`` is a ``B x H x W`` (image resolution) binary raster.
        """
        ref_mid, tgt_mid = ref_taps.mid, tgt_taps.mid
        if ref_mid.shape != tgt_mid.shape:
            raise ShapeMismatch(f"ref {tuple(ref_mid.shape)} vs tgt {tuple(tgt_mid.shape)} mid taps")
        if ref_mid.shape[1] != self.mid_channels:
            raise ShapeMismatch(f"expected {self.mid_channels} mid channels, got {ref_mid.shape[1]}")
        hm, wm = ref_mid.shape[-2:]
        hh, wh = ref_taps.high.shape[-2:]
        m_mid = maskops.resize_mask(annotation, hm, wm, keep_nonempty=True).to(ref_mid.dtype)
        m_high = maskops.resize_mask(annotation, hh, wh, keep_nonempty=True)
        proto = maskops.mask_avg_pool(ref_mid, m_mid)
        with torch.no_grad():
            pm = maskops.pseudo_mask(ref_taps.high, tgt_taps.high, m_high)
            pm_mid = maskops.resize_map(pm, hm, wm).clamp(0.0, 1.0).to(ref_mid.dtype)
        f_r = self._project(ref_mid, proto, m_mid)
        f_t = self._project(tgt_mid, proto, pm_mid)
        return f_r, f_t, {"prototype": proto, "ref_mask": m_mid, "pseudo_mask": pm_mid}

    def _tokens(self, feats):
        b, c, h, w = feats.shape
        tokens = feats.flatten(2).transpose(1, 2)
        pos = None
        if self.config.positional_encoding:
            pos = sine_position_encoding(h, w, c, dtype=feats.dtype)[None]
        return tokens, pos

    def start_queries(self, batch: int, f_r=None, ref_mask=None) -> torch.Tensor:
        """Per-episode query rows: learnable rows, plus prototype rows for non-random modes."""
        q = self.queries[None].expand(batch, -1, -1)
        mode = self.config.query_init
        if mode == "random":
            return q
        fg = maskops.mask_avg_pool(f_r, ref_mask)
        bg_mask = 1 - ref_mask
        has_bg = bg_mask.flatten(1).sum(dim=1) > 0
        safe_bg = torch.where(has_bg[:, None, None], bg_mask, torch.ones_like(bg_mask))
        bg = maskops.mask_avg_pool(f_r, safe_bg) * has_bg[:, None].to(f_r.dtype)
        rows = torch.stack(
            [init_queries(mode, self.config.n_queries, self.config.dim, 0, fg[i], bg[i]) for i in range(batch)]
        )
        return rows + q

    def generate_prompts(self, f_r, f_t, queries=None):
        if f_r.shape[1] != self.config.dim or f_t.shape[1] != self.config.dim:
            raise ShapeMismatch(f"features must have {self.config.dim} channels")
        b = f_r.shape[0]
        if queries is None:
            queries = self.queries[None].expand(b, -1, -1)
        ref_tokens, ref_pos = self._tokens(f_r)
        tgt_tokens, tgt_pos = self._tokens(f_t)
        q_r = self.stage_ref(queries, ref_tokens, ref_pos)
        return self.stage_tgt(q_r, tgt_tokens, tgt_pos)

    def forward(self, ref_taps: EncoderTaps, tgt_taps: EncoderTaps, annotation):
        f_r, f_t, extras = self.augment(ref_taps, tgt_taps, annotation)
        queries = self.start_queries(f_r.shape[0], f_r, extras["ref_mask"])
        return self.generate_prompts(f_r, f_t, queries)
