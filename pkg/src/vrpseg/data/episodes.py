"""Reference/target episode sampling over a manifest and fold split."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .. import prompts
from ..errors import EmptyClass, InsufficientItems
from .folds import FoldSpec
from .manifest import DatasetManifest


@dataclass(eq=False)
class Episode:
    ref_index: int
    tgt_index: int
    class_id: int
    class_name: str
    ref_image: np.ndarray
    ref_gt: np.ndarray
    annotation: prompts.Annotation
    tgt_image: np.ndarray
    tgt_gt: np.ndarray
    seed: int

    def key(self) -> tuple:
        return (self.ref_index, self.tgt_index, self.class_id, self.annotation.kind, self.seed)


def episode_seed(seed: int, index: int) -> int:
    """Seed of episode ``index``; streams are reproducible item by item."""
    return int(np.random.default_rng([seed, index, 0xE915]).integers(2**31))


def split_class_ids(manifest: DatasetManifest, spec: FoldSpec, split: str) -> list[int]:
    ids = []
    for name in spec.classes(split):
        if name not in manifest.classes:
            raise EmptyClass(f"class {name!r} of {spec.dataset} fold {spec.fold} is not in the manifest")
        ids.append(manifest.class_id(name))
    return ids


def make_episode(manifest, ref: int, tgt: int, class_id: int, annotation_kind: str, seed: int) -> Episode:
    ref_gt = manifest.mask(ref, class_id)
    tgt_gt = manifest.mask(tgt, class_id)
    if not ref_gt.any() or not tgt_gt.any():
        raise EmptyClass(f"class {class_id} missing from item {ref if not ref_gt.any() else tgt}")
    annotation = prompts.simulate(annotation_kind, ref_gt, seed, source_class=class_id)
    return Episode(
        ref_index=ref,
        tgt_index=tgt,
        class_id=class_id,
        class_name=manifest.class_name(class_id),
        ref_image=manifest.image(ref),
        ref_gt=ref_gt,
        annotation=annotation,
        tgt_image=manifest.image(tgt),
        tgt_gt=tgt_gt,
        seed=seed,
    )


def _checked_pools(manifest: DatasetManifest, spec: FoldSpec, split: str) -> tuple[list[int], dict]:
    class_ids = split_class_ids(manifest, spec, split)
    pools = {cid: manifest.items_with(cid) for cid in class_ids}
    for cid, pool in pools.items():
        if len(pool) < 2:
            raise InsufficientItems(
                f"class {manifest.class_name(cid)!r} has {len(pool)} item(s); need at least 2"
            )
    return class_ids, pools


def _plan(class_ids, pools, annotation_kind: str, seed: int, index: int) -> tuple[int, int, int, str, int]:
    s = episode_seed(seed, index)
    rng = np.random.default_rng(s)
    cid = class_ids[int(rng.integers(len(class_ids)))]
    ref, tgt = rng.choice(pools[cid], size=2, replace=False)
    kind = annotation_kind
    if kind == "mixed":
        kind = prompts.KINDS[int(rng.integers(len(prompts.KINDS)))]
    return int(ref), int(tgt), cid, kind, s


def sample_episodes(
    manifest: DatasetManifest,
    spec: FoldSpec,
    split: str,
    n: int,
    annotation_kind: str = "mask",
    seed: int = 0,
    start: int = 0,
    workers: int = 1,
) -> Iterator[Episode]:
    """Yield episodes ``start .. start+n-1`` of the stream defined by ``seed``.

    Classes are drawn uniformly from the split's classes, then a distinct
    reference and target item containing that class. ``annotation_kind="mixed"``
    draws the kind per episode. With ``workers > 1`` episodes are built in a
    thread pool; the order and content of the stream do not change.
    """
    if annotation_kind != "mixed" and annotation_kind not in prompts.KINDS:
        raise ValueError(f"annotation kind must be one of {prompts.KINDS + ('mixed',)}")
    class_ids, pools = _checked_pools(manifest, spec, split)
    plans = (_plan(class_ids, pools, annotation_kind, seed, i) for i in range(start, start + n))
    if workers <= 1:
        for ref, tgt, cid, kind, s in plans:
            yield make_episode(manifest, ref, tgt, cid, kind, s)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda p: make_episode(manifest, p[0], p[1], p[2], p[3], p[4]), list(plans))


def extra_references(manifest: DatasetManifest, episode: Episode, n_extra: int, annotation_kind: str) -> list[Episode]:
    """``n_extra`` more references of the episode's class for the same target, drawn from the episode seed."""
    pool = [i for i in manifest.items_with(episode.class_id) if i not in (episode.ref_index, episode.tgt_index)]
    if len(pool) < n_extra:
        raise InsufficientItems(f"class {episode.class_name!r} has too few items for {n_extra + 1} references")
    rng = np.random.default_rng([episode.seed, 0x5F])
    picks = rng.choice(pool, size=n_extra, replace=False)
    return [
        make_episode(manifest, int(r), episode.tgt_index, episode.class_id, annotation_kind, episode.seed + k + 1)
        for k, r in enumerate(picks)
    ]
