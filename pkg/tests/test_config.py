import json

import pytest

from vrpseg.config import RunConfig, config_from_dict, dump_config, load_config, reference_config, resolve_dataset
from vrpseg.errors import BadConfig


def test_reference_config_round_trips(tmp_path):
    text = reference_config()
    path = tmp_path / "ref.json"
    path.write_text(text)
    assert dump_config(load_config(path)) == text
    assert load_config(path) == RunConfig()


def test_reference_config_lists_every_section():
    raw = json.loads(reference_config())
    assert set(raw) == {"data", "annotation_kind", "train", "encoder", "vrp"}
    assert raw["vrp"] == {"n_queries": 50, "dim": 64, "heads": 4, "positional_encoding": True,
                          "query_init": "random", "seed": 1}
    assert raw["train"]["lr"] == 1e-3 and raw["train"]["steps"] == 1000


def test_partial_sections_keep_defaults():
    cfg = config_from_dict({"vrp": {"n_queries": 10}, "train": {"lr": 5e-4}})
    assert cfg.vrp.n_queries == 10 and cfg.vrp.heads == 4
    assert cfg.train.lr == 5e-4 and cfg.train.batch == 8


@pytest.mark.parametrize("raw", [
    {"extra": 1},
    {"vrp": {"layers": 2}},
    {"train": {"lr": -1}},
    {"vrp": {"heads": 3}},
    {"vrp": {"dim": 32, "heads": 4}},
    {"annotation_kind": "polygon"},
    {"data": {"dataset": "imagenet"}},
    {"train": []},
    [],
])
def test_bad_configs(raw):
    with pytest.raises(BadConfig):
        config_from_dict(raw)


def test_load_errors(tmp_path):
    with pytest.raises(BadConfig):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(BadConfig):
        load_config(tmp_path / "bad.json")


def test_synthetic_dataset_is_cached(monkeypatch, tmp_path):
    monkeypatch.setenv("VRPSEG_CACHE", str(tmp_path))
    cfg = config_from_dict({"data": {"n_images": 12, "synth_seed": 4}})
    first = resolve_dataset(cfg.data)
    assert (tmp_path / "synth-s4-n12" / "manifest.json").exists()
    assert resolve_dataset(cfg.data) == first
