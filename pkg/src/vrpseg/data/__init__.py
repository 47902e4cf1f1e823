from .episodes import Episode, extra_references, make_episode, sample_episodes
from .folds import DATASETS, FoldSpec, fold_spec, n_folds
from .manifest import DatasetManifest, ManifestItem, load_manifest
from .synth import SynthConfig, synth_dataset

__all__ = [
    "DATASETS",
    "DatasetManifest",
    "Episode",
    "extra_references",
    "FoldSpec",
    "ManifestItem",
    "SynthConfig",
    "fold_spec",
    "load_manifest",
    "make_episode",
    "n_folds",
    "sample_episodes",
    "synth_dataset",
]
