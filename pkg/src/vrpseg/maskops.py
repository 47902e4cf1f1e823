"""Binary-mask geometry, masked average pooling and the training-free pseudo-mask.

All functions accept torch tensors (numpy arrays are converted) and work either on
a single item (``C x H x W`` features, ``H x W`` masks) or on a batch with one extra
leading dimension.
"""

from __future__ import annotations

import torch

from .errors import EmptyMask, NonFiniteInput, ShapeMismatch, ZeroVector

COSINE_EPS = 1e-8
# raw maps whose spread is below this are treated as constant
CONSTANT_TOL = 1e-6


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x)


def is_binary(mask) -> bool:
    mask = _as_tensor(mask)
    return bool(((mask == 0) | (mask == 1)).all())


def mask_avg_pool(features, mask) -> torch.Tensor:
    """Mean feature vector over the foreground pixels of ``mask``.

    Args:
        features: ``C x H x W`` or ``B x C x H x W``.
        mask: ``H x W`` or ``B x H x W`` with values in {0, 1}.
    Returns:
        ``C`` or ``B x C`` prototype(s).
    """
    features = _as_tensor(features)
    mask = _as_tensor(mask)
    single = features.dim() == 3
    if single:
        features, mask = features.unsqueeze(0), mask.unsqueeze(0)
    if features.dim() != 4 or mask.dim() != 3:
        raise ShapeMismatch(f"bad ranks: features {tuple(features.shape)}, mask {tuple(mask.shape)}")
    if features.shape[0] != mask.shape[0] or features.shape[-2:] != mask.shape[-2:]:
        raise ShapeMismatch(
            f"mask {tuple(mask.shape[-2:])} does not match features {tuple(features.shape[-2:])}"
        )
    mask = mask.to(features.dtype)
    area = mask.sum(dim=(1, 2))
    if bool((area == 0).any()):
        raise EmptyMask("cannot pool over an empty mask")
    pooled = torch.einsum("bchw,bhw->bc", features, mask) / area[:, None]
    return pooled[0] if single else pooled


def min_max_normalize(raw) -> torch.Tensor:
    """Affinely map ``raw`` (``H x W`` or ``B x H x W``) onto [0, 1] per map.

    A constant map becomes all-ones.
    """
    raw = _as_tensor(raw)
    if not torch.is_floating_point(raw):
        raw = raw.to(torch.get_default_dtype())
    if not bool(torch.isfinite(raw).all()):
        raise NonFiniteInput("min_max_normalize got NaN or Inf")
    single = raw.dim() < 3
    flat = raw.reshape(1, -1) if single else raw.reshape(raw.shape[0], -1)
    lo = flat.min(dim=1, keepdim=True).values
    hi = flat.max(dim=1, keepdim=True).values
    spread = hi - lo
    constant = spread <= CONSTANT_TOL
    safe = torch.where(constant, torch.ones_like(spread), spread)
    out = torch.where(constant, torch.ones_like(flat), (flat - lo) / safe)
    return out.reshape(raw.shape)


def cosine_similarity_matrix(a, b, strict: bool = False) -> torch.Tensor:
    """Pairwise cosine similarity between rows of ``a`` (... x M x C) and ``b`` (... x K x C).

    Zero vectors get similarity 0 to everything unless ``strict`` is set, in which
    case they raise :class:`ZeroVector`.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    na = a.norm(dim=-1, keepdim=True)
    nb = b.norm(dim=-1, keepdim=True)
    if strict and (bool((na == 0).any()) or bool((nb == 0).any())):
        raise ZeroVector("zero-norm feature vector in cosine similarity")
    # normalise each vector first so the result is exactly scale-invariant above eps
    a = a / na.clamp_min(COSINE_EPS)
    b = b / nb.clamp_min(COSINE_EPS)
    return a @ b.transpose(-1, -2)


def max_similarity(ref_high, tgt_high, ref_mask, strict: bool = False) -> torch.Tensor:
    """Unnormalized pseudo-mask: best cosine match of each target pixel to reference foreground."""
    ref_high, tgt_high, ref_mask = _as_tensor(ref_high), _as_tensor(tgt_high), _as_tensor(ref_mask)
    single = ref_high.dim() == 3
    if single:
        ref_high, tgt_high, ref_mask = ref_high[None], tgt_high[None], ref_mask[None]
    if ref_high.shape[:2] != tgt_high.shape[:2]:
        raise ShapeMismatch(
            f"channel mismatch: ref {tuple(ref_high.shape)} vs tgt {tuple(tgt_high.shape)}"
        )
    if ref_mask.shape != (ref_high.shape[0],) + tuple(ref_high.shape[-2:]):
        raise ShapeMismatch(
            f"ref_mask {tuple(ref_mask.shape[-2:])} does not match ref features {tuple(ref_high.shape[-2:])}"
        )
    fg = ref_mask.reshape(ref_mask.shape[0], -1) > 0
    if bool((fg.sum(dim=1) == 0).any()):
        raise EmptyMask("reference mask is empty")
    b, c, ht, wt = tgt_high.shape
    tgt = tgt_high.reshape(b, c, -1).transpose(1, 2)
    ref = ref_high.reshape(b, c, -1).transpose(1, 2)
    sim = cosine_similarity_matrix(tgt, ref, strict=strict)  # b x (ht*wt) x (hr*wr)
    sim = sim.masked_fill(~fg[:, None, :], float("-inf"))
    best = sim.max(dim=2).values.reshape(b, ht, wt)
    return best[0] if single else best


def pseudo_mask(ref_high, tgt_high, ref_mask, strict: bool = False) -> torch.Tensor:
    """Training-free target foreground estimate in [0, 1] at the high-tap resolution."""
    return min_max_normalize(max_similarity(ref_high, tgt_high, ref_mask, strict=strict))


def _nearest_index(src: int, dst: int, device=None) -> torch.Tensor:
    # floor(i * src / dst) in exact integer arithmetic
    return (torch.arange(dst, device=device) * src) // dst


def resize_mask(mask, new_h: int, new_w: int, keep_nonempty: bool = False) -> torch.Tensor:
    """Nearest-neighbour resize of ``H x W`` or ``B x H x W`` masks.

    With ``keep_nonempty`` a nonempty input that vanishes after resizing keeps one
    foreground cell: the one nearest to the input's foreground centroid.
    """
    mask = _as_tensor(mask)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    single = mask.dim() == 2
    if single:
        mask = mask[None]
    h, w = mask.shape[-2:]
    rows = _nearest_index(h, new_h, mask.device)
    cols = _nearest_index(w, new_w, mask.device)
    out = mask[:, rows][:, :, cols].clone()
    if keep_nonempty:
        for i in range(out.shape[0]):
            if out[i].sum() == 0 and mask[i].sum() > 0:
                r, c = _centroid_cell(mask[i], new_h, new_w)
                out[i, r, c] = 1
    return out[0] if single else out


def _centroid_cell(mask: torch.Tensor, new_h: int, new_w: int) -> tuple[int, int]:
    h, w = mask.shape
    coords = torch.nonzero(mask > 0).to(torch.float64)
    cy, cx = coords.mean(dim=0).tolist()
    # resized-grid cell containing the centroid pixel
    r = min(new_h - 1, max(0, int((cy + 0.5) * new_h / h)))
    c = min(new_w - 1, max(0, int((cx + 0.5) * new_w / w)))
    return r, c


def resize_map(values, new_h: int, new_w: int) -> torch.Tensor:
    """Bilinear resize for continuous maps (``H x W`` or ``B x H x W``); keeps [0, 1] range."""
    values = _as_tensor(values)
    single = values.dim() == 2
    x = values[None, None] if single else values[:, None]
    out = torch.nn.functional.interpolate(x, size=(new_h, new_w), mode="bilinear", align_corners=False)
    return out[0, 0] if single else out[:, 0]
