"""JSON run configuration: one file covering data, model hyperparameters and training.

Unknown keys are rejected at every level. ``reference_config()`` is the
documented set of defaults; command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import EncoderConfig
from .data.folds import DATASETS, fold_spec
from .data.manifest import load_manifest
from .data.synth import SynthConfig, synth_dataset
from .errors import BadConfig, DataError
from .model import ModelConfig
from .prompts import KINDS
from .train import TrainConfig, preset
from .vrp import VRPConfig

CACHE_ENV = "VRPSEG_CACHE"


@dataclass
class DataConfig:
    root: str | None = None  # dataset directory; None means the cached synthetic dataset
    dataset: str = "synthetic"
    fold: int = 0
    synth_seed: int = 0
    n_images: int = 240


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    annotation_kind: str = "mask"
    train: TrainConfig = field(default_factory=lambda: preset("synthetic"))
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vrp: VRPConfig = field(default_factory=VRPConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(encoder=self.encoder, vrp=self.vrp)

    def spec(self):
        return fold_spec(self.data.dataset, self.data.fold)


SECTIONS = {"data": DataConfig, "train": TrainConfig, "encoder": EncoderConfig, "vrp": VRPConfig}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise BadConfig(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise BadConfig(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"{where}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise BadConfig("config must be a JSON object")
    allowed = set(SECTIONS) | {"annotation_kind"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise BadConfig(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    defaults = RunConfig()
    parts = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise BadConfig(f"{name}: expected an object, got {type(section).__name__}")
        parts[name] = _build(cls, {**dataclasses.asdict(getattr(defaults, name)), **section}, name)
    kind = raw.get("annotation_kind", defaults.annotation_kind)
    if kind not in KINDS + ("mixed",):
        raise BadConfig(f"annotation_kind must be one of {KINDS + ('mixed',)}, got {kind!r}")
    if parts["data"].dataset not in DATASETS:
        raise BadConfig(f"data.dataset must be one of {DATASETS}")
    if parts["vrp"].dim != 64:
        # the frozen decoder stub fixes the prompt width
        raise BadConfig("vrp.dim must equal the decoder width (64)")
    return RunConfig(annotation_kind=kind, **parts)


def config_to_dict(config: RunConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(config)))


def dump_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def reference_config() -> str:
    return dump_config(RunConfig())


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise BadConfig(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BadConfig(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "vrpseg")


def resolve_dataset(data: DataConfig):
    """Load ``data.root``, or build (once) and reuse the synthetic dataset in the cache directory."""
    if data.root is not None:
        return load_manifest(data.root)
    if data.dataset != "synthetic":
        raise DataError(f"dataset {data.dataset!r} needs data.root pointing at a manifest directory")
    root = cache_dir() / f"synth-s{data.synth_seed}-n{data.n_images}"
    if (root / "manifest.json").exists():
        return load_manifest(root)
    manifest = synth_dataset(SynthConfig(n_images=data.n_images), seed=data.synth_seed)
    manifest.write(root)
    return manifest
