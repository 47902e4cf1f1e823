import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

import helptext
from vrpseg import cli
from vrpseg.cli import NVRP_SWEEP, QUERY_SWEEP, _ablation_runs, main
from vrpseg.config import RunConfig
from vrpseg.vrp import INIT_MODES

SNAPSHOT = Path(__file__).parent / "snapshots" / "help.txt"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_help_snapshot():
    assert helptext.all_help() == SNAPSHOT.read_text()


def test_defaults_from_the_protocol():
    parser = cli.build_parser()
    assert parser.parse_args(["eval", "--checkpoint", "c", "--out", "o"]).episodes == 1000
    assert parser.parse_args(["compare-gp", "--checkpoint", "c", "--out", "o", "--kind", "all"]).kind == "all"


def test_synth_refuses_non_empty_dir_and_is_deterministic(tmp_path, capsys):
    args = ["synth", "--n-images", 8, "--seed", 5]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 2
    assert run(capsys, *args, "--out", tmp_path / "a", "--force")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    for f in sorted((tmp_path / "a").rglob("*.*")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert run(capsys, "synth", "--out", tmp_path / "c", "--classes", "circle,square")[0] == 2


def test_reference_config_command(tmp_path, capsys):
    code, out = run(capsys, "reference-config")
    assert code == 0 and json.loads(out.out) == json.loads(cli.reference_config())


def test_train_dry_run_counts(capsys):
    from vrpseg.model import VRPSegModel

    code, out = run(capsys, "train", "--dry-run")
    counts = {line.split()[0]: int(line.split()[1]) for line in out.out.splitlines()}
    model = VRPSegModel()
    assert counts["trainable"] == sum(p.numel() for _, p in model.trainable_parameters()) == 86_784
    assert counts["total"] == sum(p.numel() for p in model.parameters())
    assert counts["total"] == counts["backbone"] + counts["vrp"] + counts["decoder"]


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown": 1}))
    assert run(capsys, "train", "--dry-run", "--config", bad)[0] == 2
    assert run(capsys, "train", "--out", tmp_path / "o", "--data", tmp_path / "nowhere")[0] == 3
    assert run(capsys, "eval", "--checkpoint", tmp_path / "nowhere", "--out", tmp_path / "r")[0] == 3


def test_diverged_exit_code(tmp_path, capsys, monkeypatch):
    import torch

    from vrpseg import train as train_mod

    real = train_mod.bce_dice_loss

    def nan_loss(logits, gt, mode="both"):
        r = real(logits, gt, mode)
        r.total = r.total * torch.tensor(float("nan"))
        return r

    monkeypatch.setattr(train_mod, "bce_dice_loss", nan_loss)
    code, out = run(capsys, "train", "--out", tmp_path / "o", "--steps", 2)
    assert code == 4
    assert (tmp_path / "o" / "diverged" / "manifest.json").exists()


def test_simulate_prompts_writes_png_and_sidecar(tmp_path, capsys):
    code, _ = run(capsys, "simulate-prompts", "--kind", "box", "-n", 3, "--out", tmp_path, "--seed", 2)
    assert code == 0
    pngs = sorted(tmp_path.glob("*.png"))
    assert len(pngs) == 3
    for png in pngs:
        arr = np.array(Image.open(png))
        assert arr.ndim == 2 and set(np.unique(arr)) <= {0, 255} and arr.max() == 255
        side = json.loads(png.with_suffix(".json").read_text())
        assert side["kind"] == "box" and len(side["box"]) == 4 and {"k", "seed"} <= set(side)


def test_train_eval_compare_end_to_end(tmp_path, capsys):
    assert run(capsys, "train", "--out", tmp_path / "run", "--steps", 3, "--seed", 1)[0] == 0
    rows = [json.loads(l) for l in (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 3
    ck = tmp_path / "run" / "checkpoint"
    assert run(capsys, "eval", "--checkpoint", ck, "--episodes", 6, "--fold", "all", "--out", tmp_path / "ev")[0] == 0
    report = json.loads((tmp_path / "ev" / "results.json").read_text())
    assert [r["fold"] for r in report["runs"]] == [0, 1, 2]
    code, out = run(capsys, "compare-gp", "--checkpoint", ck, "--episodes", 4, "--kind", "all",
                    "--out", tmp_path / "gp")
    assert code == 0
    report = json.loads((tmp_path / "gp" / "results.json").read_text())
    assert [r.get("gp_variant") for r in report["runs"]] == [None, "points", "box", "points_and_box"]
    assert len(report["decoder_sha256"]) == 64
    code, out = run(capsys, "info")
    assert code == 0 and "86784 trainable" in out.out


def test_ablation_sweeps():
    base = RunConfig()
    q = _ablation_runs("queries", base)
    assert [c.vrp.n_queries for _, c in q] == list(QUERY_SWEEP) == [10, 25, 50, 75, 100]
    assert [c.vrp.query_init for _, c in _ablation_runs("init", base)] == list(INIT_MODES)
    assert [c.train.loss_mode for _, c in _ablation_runs("loss", base)] == ["bce", "dice", "both"]
    assert NVRP_SWEEP == (1, 5)
    assert base.vrp.n_queries == 50 and base.train.loss_mode == "both"


def test_ablate_nvrp_runs(tmp_path, capsys):
    code, out = run(capsys, "ablate", "--which", "nvrp", "--steps", 2, "--episodes", 3, "--out", tmp_path)
    assert code == 0
    report = json.loads((tmp_path / "results.json").read_text())
    assert [r["label"] for r in report["runs"]] == ["1-VRP", "5-VRP"]
