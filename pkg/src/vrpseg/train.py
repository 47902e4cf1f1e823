"""Training loop for the VRP encoder and the checkpoint directory format.

Only ``model.trainable_parameters()`` reach the optimizer; the backbone and the
decoder stub are frozen and saved alongside for reproducible comparisons.

Checkpoint layout::

    ckpt/
      manifest.json          # version, step, configs, tensor index
      tensors/<name>.f32     # raw little-endian float32, C order
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .backbone import EncoderConfig
from .data.episodes import sample_episodes
from .errors import CorruptTensor, DivergedLoss, MissingFile, VersionMismatch
from .losses import LOSS_MODES, LossReport, bce_dice_loss
from .model import Batch, ModelConfig, VRPSegModel, collate
from .samstub import DecoderConfig
from .vrp import VRPConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_FORMAT = "vrpseg-checkpoint"
ADAM_BETAS = (0.9, 0.999)


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch: int = 8
    epochs: int = 100
    steps_per_epoch: int = 125
    steps: int | None = None  # overrides epochs * steps_per_epoch when set
    weight_decay: float = 1e-2
    clip_grad: float | None = 1.0
    loss_mode: str = "both"
    hue_augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.steps if self.steps is not None else self.epochs * self.steps_per_epoch


PRESETS = {
    "coco20i": {"lr": 1e-4, "epochs": 50},
    "pascal5i": {"lr": 2e-4, "epochs": 100},
    "coco_to_pascal": {"lr": 1e-4, "epochs": 50},
    # desk scale: a few minutes on one CPU core
    "synthetic": {"lr": 1e-3, "steps": 1000},
}


def preset(dataset: str, **overrides) -> TrainConfig:
    return TrainConfig(**{**PRESETS[dataset], **overrides})


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """Cosine decay from ``lr0`` at step 0 to exactly 0 at ``total``."""
    t = min(max(step, 0), total) / total
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t))


def hue_rotate(images: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate RGB colours about the grey axis by one angle per image; greys are fixed."""
    k = torch.full((3,), 3**-0.5, dtype=images.dtype)
    cross = torch.zeros(3, 3, dtype=images.dtype)
    cross[0, 1], cross[0, 2], cross[1, 2] = -k[2], k[1], -k[0]
    cross = cross - cross.T
    sin = torch.sin(angles).to(images.dtype)[:, None, None]
    cos = torch.cos(angles).to(images.dtype)[:, None, None]
    rot = torch.eye(3, dtype=images.dtype) + sin * cross + (1 - cos) * (cross @ cross)
    return torch.einsum("bij,bjhw->bihw", rot, images).clamp(0.0, 1.0)


def augment_batch(batch: Batch, seed: int, step: int) -> Batch:
    """Same random hue rotation for the reference and target of each episode."""
    rng = np.random.default_rng([seed, step, 0xA06])
    angles = torch.as_tensor(rng.uniform(0.0, 2 * math.pi, size=len(batch)))
    return Batch(
        hue_rotate(batch.ref_images, angles), batch.annotations, hue_rotate(batch.tgt_images, angles), batch.tgt_gt
    )


def _decays(name: str, p: torch.nn.Parameter) -> bool:
    # projection weights only: no queries, norms or biases
    return p.dim() >= 2 and name.endswith("weight") and not name.endswith("queries")


def make_optimizer(model: VRPSegModel, config: TrainConfig) -> torch.optim.AdamW:
    named = model.trainable_parameters()
    groups = [
        {"params": [p for n, p in named if _decays(n, p)], "weight_decay": config.weight_decay},
        {"params": [p for n, p in named if not _decays(n, p)], "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=config.lr, betas=ADAM_BETAS)


@dataclass
class StepRecord:
    step: int
    loss_bce: float
    loss_dice: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


class Trainer:
    """Steps the optimizer over a deterministic episode stream; resumable at any step."""

    def __init__(self, model: VRPSegModel, config: TrainConfig, manifest, spec, annotation_kind: str = "mask",
                 step: int = 0, optimizer_state: dict | None = None, workers: int = 1):
        self.model = model
        self.config = config
        self.manifest = manifest
        self.spec = spec
        self.annotation_kind = annotation_kind
        self.step = step
        self.workers = workers
        self.optimizer = make_optimizer(model, config)
        if optimizer_state is not None:
            self.optimizer.load_state_dict(optimizer_state)
        self._params = [p for _, p in model.trainable_parameters()]
        self.model.train()

    def batch(self, step: int) -> Batch:
        cfg = self.config
        episodes = list(
            sample_episodes(self.manifest, self.spec, "train", cfg.batch, self.annotation_kind,
                            seed=cfg.seed, start=step * cfg.batch, workers=self.workers)
        )
        batch = collate(episodes)
        return augment_batch(batch, cfg.seed, step) if cfg.hue_augment else batch

    def train_step(self) -> tuple[LossReport, StepRecord]:
        cfg = self.config
        lr = cosine_lr(self.step, cfg.total_steps, cfg.lr)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        batch = self.batch(self.step)
        report = bce_dice_loss(self.model.forward_batch(batch), batch.tgt_gt, cfg.loss_mode)
        if not torch.isfinite(report.total):
            raise DivergedLoss(f"non-finite loss {float(report.total.detach())} at step {self.step}", self.step, None)
        self.optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        if cfg.clip_grad is not None:
            torch.nn.utils.clip_grad_norm_(self._params, cfg.clip_grad)
        self.optimizer.step()
        losses = report.as_floats()
        record = StepRecord(self.step, losses["bce"], losses["dice"], lr)
        self.step += 1
        return report, record

    def run(self, until: int | None = None, on_record: Callable[[StepRecord], None] | None = None,
            dump_dir=None) -> list[StepRecord]:
        until = self.config.total_steps if until is None else until
        records = []
        while self.step < until:
            try:
                _, record = self.train_step()
            except DivergedLoss as exc:
                dump = None
                if dump_dir is not None:
                    dump = save_checkpoint(Path(dump_dir) / "diverged", self.model, self.config,
                                           self.step, self.optimizer, self.annotation_kind)
                raise DivergedLoss(str(exc), exc.step, dump) from None
            records.append(record)
            if on_record is not None:
                on_record(record)
        return records


@dataclass
class TrainResult:
    model: VRPSegModel
    records: list[StepRecord]
    checkpoint: Path | None = None


def train(config: TrainConfig, manifest, spec, annotation_kind: str = "mask", model_config: ModelConfig | None = None,
          out=None, workers: int = 1, meta: dict | None = None) -> TrainResult:
    """Train from scratch; with ``out`` set, write ``out/metrics.jsonl`` and a checkpoint at ``out/checkpoint``."""
    model = VRPSegModel(model_config)
    trainer = Trainer(model, config, manifest, spec, annotation_kind, workers=workers)
    if out is None:
        return TrainResult(model, trainer.run())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as f:
        records = trainer.run(on_record=lambda r: f.write(r.to_json() + "\n"), dump_dir=out)
    path = save_checkpoint(out / "checkpoint", model, config, trainer.step, trainer.optimizer, annotation_kind, meta)
    return TrainResult(model, records, path)


# checkpoints


def _config_dict(obj) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(obj)))


def model_config_from_dict(raw: dict) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(**raw["encoder"]), vrp=VRPConfig(**raw["vrp"]), decoder=DecoderConfig(**raw["decoder"])
    )


def _tensor_file(name: str) -> str:
    return f"tensors/{name}.f32"


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes()


def tensor_digest(t: torch.Tensor) -> str:
    return hashlib.sha256(_tensor_bytes(t)).hexdigest()


def decoder_hash(model: VRPSegModel) -> str:
    """Digest of every frozen decoder-stub tensor; equal hashes mean identical decoders."""
    h = hashlib.sha256()
    for name, t in model.decoder.named_tensors():
        h.update(name.encode())
        h.update(_tensor_bytes(t))
    return h.hexdigest()


def _optimizer_tensors(optimizer: torch.optim.Optimizer, names: dict[int, str]) -> tuple[list, dict]:
    tensors, steps = [], {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = names[id(p)]
            steps[name] = float(state["step"])
            tensors.append((f"optim.{name}.exp_avg", state["exp_avg"]))
            tensors.append((f"optim.{name}.exp_avg_sq", state["exp_avg_sq"]))
    return tensors, steps


def save_checkpoint(path, model: VRPSegModel, train_config: TrainConfig | None = None, step: int = 0,
                    optimizer: torch.optim.Optimizer | None = None, annotation_kind: str | None = None,
                    meta: dict | None = None) -> Path:
    """Write every tensor (trainable, frozen, optimizer moments) plus ``manifest.json`` to ``path``."""
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    named = [("vrp." + n, p) for n, p in model.vrp.named_parameters()] + model.frozen_parameters()
    names = {id(p): n for n, p in named}
    tensors = list(named)
    adam_steps = {}
    if optimizer is not None:
        extra, adam_steps = _optimizer_tensors(optimizer, names)
        tensors += extra
    index = []
    for name, t in tensors:
        data = _tensor_bytes(t)
        (path / _tensor_file(name)).write_bytes(data)
        index.append({
            "name": name,
            "file": _tensor_file(name),
            "shape": list(t.shape),
            "dtype": "float32",
            "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": step,
        "annotation_kind": annotation_kind,
        "meta": meta or {},
        "model_config": _config_dict(model.config),
        "train_config": None if train_config is None else _config_dict(train_config),
        "optimizer": None if optimizer is None else {"adam_steps": adam_steps},
        "tensors": index,
    }
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


@dataclass
class Checkpoint:
    path: Path
    model: VRPSegModel
    step: int
    train_config: TrainConfig | None
    annotation_kind: str | None
    manifest: dict
    tensors: dict[str, torch.Tensor] = field(repr=False, default_factory=dict)

    @property
    def meta(self) -> dict:
        return self.manifest.get("meta", {})

    def optimizer_state(self, optimizer: torch.optim.Optimizer) -> dict | None:
        """A ``state_dict`` for ``optimizer`` (built over the same model) restoring the saved moments."""
        info = self.manifest.get("optimizer")
        if info is None:
            return None
        names = {id(p): n for n, p in (("vrp." + n, p) for n, p in self.model.vrp.named_parameters())}
        sd = optimizer.state_dict()
        state = {}
        flat = [p for g in optimizer.param_groups for p in g["params"]]
        for i, p in enumerate(flat):
            name = names[id(p)]
            if name in info["adam_steps"]:
                state[i] = {
                    "step": torch.tensor(info["adam_steps"][name]),
                    "exp_avg": self.tensors[f"optim.{name}.exp_avg"].clone(),
                    "exp_avg_sq": self.tensors[f"optim.{name}.exp_avg_sq"].clone(),
                }
        sd["state"] = state
        return sd


def _read_tensor(root: Path, entry: dict) -> torch.Tensor:
    file = root / entry["file"]
    if not file.exists():
        raise MissingFile(f"missing tensor file: {file}")
    data = file.read_bytes()
    if len(data) != entry["bytes"] or len(data) != 4 * math.prod(entry["shape"]):
        raise CorruptTensor(f"{file}: {len(data)} bytes, expected {entry['bytes']}")
    if hashlib.sha256(data).hexdigest() != entry["sha256"]:
        raise CorruptTensor(f"{file}: sha256 mismatch")
    return torch.from_numpy(np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(entry["shape"]))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise MissingFile(f"missing file: {mpath}")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{mpath}: format {manifest.get('format')!r} version {manifest.get('version')!r}, "
            f"expected {CHECKPOINT_FORMAT!r} version {CHECKPOINT_VERSION}"
        )
    model = VRPSegModel(model_config_from_dict(manifest["model_config"]))
    tensors = {e["name"]: _read_tensor(path, e) for e in manifest["tensors"]}
    named = [("vrp." + n, p) for n, p in model.vrp.named_parameters()] + model.frozen_parameters()
    with torch.no_grad():
        for name, p in named:
            if name not in tensors:
                raise CorruptTensor(f"{mpath}: tensor {name!r} missing from checkpoint")
            if tuple(tensors[name].shape) != tuple(p.shape):
                raise CorruptTensor(f"{name}: shape {tuple(tensors[name].shape)} vs model {tuple(p.shape)}")
            p.copy_(tensors[name])
    raw_train = manifest.get("train_config")
    return Checkpoint(
        path=path,
        model=model,
        step=int(manifest["step"]),
        train_config=None if raw_train is None else TrainConfig(**raw_train),
        annotation_kind=manifest.get("annotation_kind"),
        manifest=manifest,
        tensors=tensors,
    )


def resume(checkpoint: Checkpoint, manifest, spec, workers: int = 1) -> Trainer:
    """A trainer that continues exactly where ``checkpoint`` stopped."""
    if checkpoint.train_config is None:
        raise ValueError("checkpoint has no training config to resume from")
    trainer = Trainer(checkpoint.model, checkpoint.train_config, manifest, spec,
                      checkpoint.annotation_kind or "mask", step=checkpoint.step, workers=workers)
    state = checkpoint.optimizer_state(trainer.optimizer)
    if state is not None:
        trainer.optimizer.load_state_dict(state)
    return trainer
