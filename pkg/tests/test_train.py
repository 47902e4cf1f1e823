import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from vrpseg.errors import CorruptTensor, DivergedLoss, VersionMismatch
from vrpseg.model import VRPSegModel
from vrpseg.train import (
    PRESETS, TrainConfig, Trainer, cosine_lr, decoder_hash, hue_rotate, load_checkpoint, preset, resume,
    save_checkpoint, train,
)


def snapshot(named):
    return {n: p.detach().clone() for n, p in named}


def small_config(**kw):
    return TrainConfig(**{"lr": 1e-3, "batch": 2, "steps": 4, **kw})


def test_presets():
    assert preset("coco20i").lr == 1e-4 and preset("coco20i").epochs == 50
    assert preset("pascal5i").lr == 2e-4 and preset("pascal5i").epochs == 100
    assert preset("coco20i").batch == 8
    assert preset("synthetic").total_steps == 1000
    assert set(PRESETS) == {"coco20i", "pascal5i", "coco_to_pascal", "synthetic"}
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)


@given(st.integers(1, 5000), st.floats(1e-6, 1.0))
def test_cosine_schedule(total, lr0):
    values = [cosine_lr(s, total, lr0) for s in range(total + 1)]
    assert values[0] == lr0
    assert values[-1] <= 1e-6 * lr0
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_hue_rotation():
    g = torch.Generator().manual_seed(0)
    images = torch.rand(1, 3, 4, 4, generator=g) * 0.5 + 0.25
    # a third of a turn about the grey axis cycles the channels
    out = hue_rotate(images, torch.tensor([2 * math.pi / 3]))
    assert torch.allclose(out, images[:, [2, 0, 1]], atol=1e-6)
    grey = torch.full((1, 3, 2, 2), 0.3)
    assert torch.allclose(hue_rotate(grey, torch.tensor([1.234])), grey, atol=1e-6)
    assert torch.allclose(hue_rotate(images, torch.tensor([0.0])), images)


def test_lr_zero_step_changes_nothing(small_manifest, spec0):
    model = VRPSegModel()
    # no weight decay either, so a zero learning rate leaves every parameter untouched
    trainer = Trainer(model, small_config(weight_decay=0.0), small_manifest, spec0)
    for group in trainer.optimizer.param_groups:
        group["lr"] = 0.0
    before = snapshot(model.named_parameters())
    batch = trainer.batch(0)
    from vrpseg.losses import bce_dice_loss

    loss = bce_dice_loss(model.forward_batch(batch), batch.tgt_gt).total
    trainer.optimizer.zero_grad()
    loss.backward()
    trainer.optimizer.step()
    for n, p in model.named_parameters():
        assert torch.equal(p, before[n]), n


def test_steps_only_move_trainable_parameters(small_manifest, spec0):
    model = VRPSegModel()
    frozen = snapshot(model.frozen_parameters())
    trainable = snapshot(model.trainable_parameters())
    Trainer(model, small_config(steps=3), small_manifest, spec0).run()
    for n, p in model.frozen_parameters():
        assert torch.equal(p, frozen[n]), n
    moved = [n for n, p in model.trainable_parameters() if not torch.equal(p, trainable[n])]
    assert "vrp.queries" in moved and len(moved) == len(trainable)


def test_weight_decay_groups():
    from vrpseg.train import make_optimizer

    model = VRPSegModel()
    opt = make_optimizer(model, TrainConfig())
    decayed = {id(p) for p in opt.param_groups[0]["params"]}
    names = {n for n, p in model.trainable_parameters() if id(p) in decayed}
    assert "vrp.augment_proj.weight" in names and "vrp.stage_ref.cross.q_proj.weight" in names
    assert not any("norm" in n or n.endswith("bias") or n.endswith("queries") for n in names)
    assert opt.param_groups[0]["weight_decay"] == 1e-2 and opt.param_groups[1]["weight_decay"] == 0.0


def test_training_is_deterministic_and_logs_metrics(small_manifest, spec0, tmp_path):
    a = train(small_config(), small_manifest, spec0, "point", out=tmp_path / "a")
    b = train(small_config(), small_manifest, spec0, "point", out=tmp_path / "b")
    log_a = (tmp_path / "a" / "metrics.jsonl").read_text()
    assert log_a == (tmp_path / "b" / "metrics.jsonl").read_text()
    rows = [json.loads(line) for line in log_a.splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert all(set(r) == {"step", "loss_bce", "loss_dice", "lr"} for r in rows)
    assert rows[0]["lr"] == 1e-3
    for (n, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert torch.equal(p, q), n


def test_checkpoint_round_trip_is_byte_identical(small_manifest, spec0, tmp_path):
    result = train(small_config(steps=2), small_manifest, spec0, out=tmp_path / "run", meta={"note": "x"})
    ck = load_checkpoint(result.checkpoint)
    assert ck.step == 2 and ck.meta == {"note": "x"} and ck.train_config == small_config(steps=2)
    trainer = resume(ck, small_manifest, spec0)
    save_checkpoint(tmp_path / "again", ck.model, ck.train_config, ck.step, trainer.optimizer, ck.annotation_kind,
                    ck.meta)
    for entry in ck.manifest["tensors"]:
        assert (result.checkpoint / entry["file"]).read_bytes() == (tmp_path / "again" / entry["file"]).read_bytes()
    assert (result.checkpoint / "manifest.json").read_text() == (tmp_path / "again" / "manifest.json").read_text()
    # reload reproduces forward outputs bit for bit
    batch = Trainer(result.model, small_config(), small_manifest, spec0).batch(9)
    result.model.eval(), ck.model.eval()
    with torch.no_grad():
        assert torch.equal(result.model.forward_batch(batch), ck.model.forward_batch(batch))
    assert decoder_hash(result.model) == decoder_hash(ck.model)
    names = {e["name"] for e in ck.manifest["tensors"]}
    assert any(n.startswith("backbone.") for n in names) and any(n.startswith("decoder.") for n in names)


def test_corrupt_and_mismatched_checkpoints(tmp_path):
    path = save_checkpoint(tmp_path / "ck", VRPSegModel())
    raw = json.loads((path / "manifest.json").read_text())
    target = path / raw["tensors"][0]["file"]
    data = target.read_bytes()
    target.write_bytes(data[:-4])
    with pytest.raises(CorruptTensor):
        load_checkpoint(path)
    flipped = bytearray(data)
    flipped[0] ^= 0xFF
    target.write_bytes(bytes(flipped))
    with pytest.raises(CorruptTensor):
        load_checkpoint(path)
    target.write_bytes(data)
    load_checkpoint(path)
    raw["version"] = 2
    (path / "manifest.json").write_text(json.dumps(raw))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_tensor_files_are_little_endian_float32(tmp_path):
    model = VRPSegModel()
    path = save_checkpoint(tmp_path / "ck", model)
    raw = (path / "tensors" / "vrp.queries.f32").read_bytes()
    assert np.array_equal(np.frombuffer(raw, "<f4").reshape(50, 64), model.vrp.queries.detach().numpy())


def test_resume_matches_uninterrupted_run(small_manifest, spec0, tmp_path):
    cfg = small_config(steps=6)
    full = Trainer(VRPSegModel(), cfg, small_manifest, spec0, "scribble").run()
    first = Trainer(VRPSegModel(), cfg, small_manifest, spec0, "scribble")
    head = first.run(until=3)
    path = save_checkpoint(tmp_path / "mid", first.model, cfg, first.step, first.optimizer, "scribble")
    tail = resume(load_checkpoint(path), small_manifest, spec0).run()
    assert [r.to_json() for r in head + tail] == [r.to_json() for r in full]


def test_divergence_raises_with_state_dump(small_manifest, spec0, tmp_path):
    model = VRPSegModel()
    with torch.no_grad():
        model.vrp.queries[0, 0] = float("nan")
    trainer = Trainer(model, small_config(), small_manifest, spec0)
    with pytest.raises(DivergedLoss) as info:
        trainer.run(dump_dir=tmp_path)
    assert info.value.step == 0
    assert info.value.dump_path == tmp_path / "diverged"
    assert (tmp_path / "diverged" / "manifest.json").exists()
