"""mIoU metrics, benchmark runs, the geometric-prompt baseline and report files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import torch

from . import maskops
from .data.episodes import extra_references, sample_episodes, split_class_ids
from .errors import EmptyAfterThreshold, ShapeMismatch
from .model import VRPSegModel, collate
from .samstub import GP_KINDS, gp_prompts_from_pseudo_mask


def binarize(logits) -> torch.Tensor:
    """Foreground where ``logit >= 0`` (sigmoid >= 0.5); an exact 0 counts as foreground."""
    return torch.as_tensor(logits) >= 0


def confusion(pred, gt) -> tuple[int, int]:
    pred = torch.as_tensor(np.asarray(pred) if not isinstance(pred, torch.Tensor) else pred).bool()
    gt = torch.as_tensor(np.asarray(gt) if not isinstance(gt, torch.Tensor) else gt).bool()
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    return int((pred & gt).sum()), int((pred | gt).sum())


def iou(pred, gt) -> float:
    """|pred & gt| / |pred | gt|; two empty masks score 1."""
    inter, union = confusion(pred, gt)
    return 1.0 if union == 0 else inter / union


@dataclass
class IoUStats:
    """Per-class intersection/union pixel sums; class IoU is computed from the sums."""

    class_names: dict[int, str]
    intersection: dict[int, int] = field(default_factory=dict)
    union: dict[int, int] = field(default_factory=dict)
    records: list[tuple[int, int, int]] = field(default_factory=list)
    empty_after_threshold: int = 0

    @property
    def n_episodes(self) -> int:
        return len(self.records)

    def add_counts(self, class_id: int, inter: int, union: int) -> None:
        self.intersection[class_id] = self.intersection.get(class_id, 0) + inter
        self.union[class_id] = self.union.get(class_id, 0) + union
        self.records.append((class_id, inter, union))

    def add(self, class_id: int, pred, gt) -> None:
        self.add_counts(class_id, *confusion(pred, gt))

    def class_iou(self, class_id: int) -> float:
        u = self.union[class_id]
        return 1.0 if u == 0 else self.intersection[class_id] / u

    def per_class(self) -> dict[str, float]:
        return {self.class_names[c]: self.class_iou(c) for c in sorted(self.intersection)}

    @property
    def mean_iou(self) -> float:
        values = list(self.per_class().values())
        return float(np.mean(values)) if values else float("nan")

    @classmethod
    def from_records(cls, class_names: dict[int, str], records) -> "IoUStats":
        stats = cls(class_names)
        for cid, inter, union in records:
            stats.add_counts(cid, inter, union)
        return stats


def mean_of_folds(stats: list[IoUStats]) -> float:
    return float(np.mean([s.mean_iou for s in stats]))


def _model(obj) -> VRPSegModel:
    return obj.model if hasattr(obj, "model") and not isinstance(obj, VRPSegModel) else obj


def _names(manifest, spec, split) -> dict[int, str]:
    return {cid: manifest.class_name(cid) for cid in split_class_ids(manifest, spec, split)}


@torch.no_grad()
def run_benchmark(model, manifest, spec, annotation_kind: str = "mask", n_episodes: int = 1000, seed: int = 0,
                  split: str = "test", batch: int = 25, workers: int = 1) -> IoUStats:
    """One-shot VRP segmentation over ``n_episodes`` episodes of the seeded stream."""
    model = _model(model)
    model.eval()
    stats = IoUStats(_names(manifest, spec, split))
    stream = sample_episodes(manifest, spec, split, n_episodes, annotation_kind, seed=seed, workers=workers)
    chunk = []
    for episode in stream:
        chunk.append(episode)
        if len(chunk) == batch:
            _score(model, chunk, stats)
            chunk = []
    if chunk:
        _score(model, chunk, stats)
    return stats


def _score(model, episodes, stats: IoUStats) -> None:
    b = collate(episodes)
    pred = binarize(model.forward_batch(b))
    for e, p in zip(episodes, pred):
        stats.add(e.class_id, p, e.tgt_gt)


def _chw(image) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float32).permute(2, 0, 1)[None]


@torch.no_grad()
def gp_logits(model, episode, kind: str) -> torch.Tensor:
    """Geometric prompts sampled from the pseudo-mask, decoded by the shared stub."""
    model = _model(model)
    ref, tgt = _chw(episode.ref_image), _chw(episode.tgt_image)
    ref_high, tgt_high = model.backbone(ref).high, model.backbone(tgt).high
    h, w = ref_high.shape[-2:]
    ann = maskops.resize_mask(torch.as_tensor(episode.annotation.raster)[None], h, w, keep_nonempty=True)
    pm = maskops.pseudo_mask(ref_high, tgt_high, ann)
    size = tuple(episode.tgt_gt.shape)
    pm_full = maskops.resize_map(pm, *size).clamp(0.0, 1.0)[0]
    prompt = gp_prompts_from_pseudo_mask(pm_full, kind, seed=episode.seed)
    rows = model.decoder.embed_geometric(prompt, size)
    return model.decoder.decode(model.decoder.embed_image(tgt), rows[None])[0]


@torch.no_grad()
def run_gp_baseline(model, manifest, spec, kind: str = "points", n_episodes: int = 1000, seed: int = 0,
                    annotation_kind: str = "mask", split: str = "test", workers: int = 1) -> IoUStats:
    """GP baseline on the same episode stream; an empty thresholded pseudo-mask scores 0 and is counted."""
    if kind not in GP_KINDS:
        raise ValueError(f"GP kind must be one of {GP_KINDS}")
    model = _model(model)
    model.eval()
    stats = IoUStats(_names(manifest, spec, split))
    for episode in sample_episodes(manifest, spec, split, n_episodes, annotation_kind, seed=seed, workers=workers):
        try:
            pred = binarize(gp_logits(model, episode, kind))
        except EmptyAfterThreshold:
            stats.empty_after_threshold += 1
            stats.add_counts(episode.class_id, 0, int(episode.tgt_gt.sum()))
            continue
        stats.add(episode.class_id, pred, episode.tgt_gt)
    return stats


@torch.no_grad()
def multi_vrp_inference(model, episodes, n_vrp: int | None = None) -> torch.Tensor:
    """Binary mask for the shared target from the first ``n_vrp`` references."""
    model = _model(model)
    model.eval()
    episodes = list(episodes)[: n_vrp or None]
    return binarize(model.multi_vrp_logits(episodes))


@torch.no_grad()
def run_multi_vrp_benchmark(model, manifest, spec, n_vrp: int, annotation_kind: str = "mask",
                            n_episodes: int = 1000, seed: int = 0, split: str = "test", workers: int = 1) -> IoUStats:
    """Like ``run_benchmark`` but each target gets ``n_vrp`` references; the first is the 1-VRP reference."""
    model = _model(model)
    model.eval()
    stats = IoUStats(_names(manifest, spec, split))
    for episode in sample_episodes(manifest, spec, split, n_episodes, annotation_kind, seed=seed, workers=workers):
        refs = [episode] + extra_references(manifest, episode, n_vrp - 1, annotation_kind)
        stats.add(episode.class_id, multi_vrp_inference(model, refs), episode.tgt_gt)
    return stats


# reports


def result_record(stats: IoUStats, spec, annotation_kind: str, gp_variant: str | None = None,
                  label: str | None = None) -> dict:
    record = {
        "dataset": spec.dataset,
        "fold": spec.fold,
        "annotation_kind": annotation_kind,
        "n_episodes": stats.n_episodes,
        "per_class": stats.per_class(),
        "mean_iou": stats.mean_iou,
    }
    if gp_variant is not None:
        record["gp_variant"] = gp_variant
        record["empty_after_threshold"] = stats.empty_after_threshold
    if label is not None:
        record["label"] = label
    return record


def _label(record: dict) -> str:
    if "label" in record:
        return record["label"]
    method = f"GP-{record['gp_variant']}" if "gp_variant" in record else "VRP"
    return f"{method} {record['dataset']} fold {record['fold']}"


def render_markdown(records: list[dict], title: str) -> str:
    lines = [f"# {title}", "", "| run | kind | episodes | mIoU | per-class IoU |", "|---|---|---|---|---|"]
    for r in records:
        per_class = ", ".join(f"{k} {v:.3f}" for k, v in r["per_class"].items())
        lines.append(f"| {_label(r)} | {r['annotation_kind']} | {r['n_episodes']} | {r['mean_iou']:.4f} | {per_class} |")
    mean = float(np.mean([r["mean_iou"] for r in records]))
    lines.append(f"| mean | | | {mean:.4f} | |")
    return "\n".join(lines) + "\n"


def render_svg(records: list[dict], title: str) -> str:
    bar_w, gap, height, top, left = 60, 20, 200, 40, 50
    width = left + len(records) * (bar_w + gap) + gap
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{top + height + 60}" '
        f'viewBox="0 0 {width} {top + height + 60}">',
        f'<text x="{left}" y="20" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + height}" x2="{width}" y2="{top + height}" stroke="black"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        y = top + height * (1 - tick)
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{tick:.1f}</text>'
        )
    for i, r in enumerate(records):
        value = min(max(r["mean_iou"], 0.0), 1.0) if r["mean_iou"] == r["mean_iou"] else 0.0
        x = left + gap + i * (bar_w + gap)
        h = height * value
        parts.append(f'<rect x="{x}" y="{top + height - h:.1f}" width="{bar_w}" height="{h:.1f}" fill="#4a78b5"/>')
        parts.append(
            f'<text x="{x + bar_w / 2}" y="{top + height - h - 4:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{r["mean_iou"]:.3f}</text>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2}" y="{top + height + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{escape(_label(r))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(records: list[dict], out_dir, title: str = "VRP segmentation results") -> dict[str, Path]:
    """Write ``results.json``, ``results.md`` and ``results.svg``; returns their paths."""
    if not records:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "title": title,
        "runs": records,
        "mean_of_runs": float(np.mean([r["mean_iou"] for r in records])),
    }
    paths = {"json": out / "results.json", "md": out / "results.md", "svg": out / "results.svg"}
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    paths["md"].write_text(render_markdown(records, title))
    paths["svg"].write_text(render_svg(records, title))
    return paths


def load_report(path) -> dict:
    with open(Path(path)) as f:
        return json.load(f)
