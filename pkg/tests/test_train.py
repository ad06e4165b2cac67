import json
import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ddunet.checkpoint import load_checkpoint
from ddunet.config import ConfigError, TrainConfig
from ddunet.train import make_optimizer, poly_lr, resolve_dataset, train

TINY = TrainConfig(
    depth_preset="small", width_multiplier=0.125, fused_channels=8, head_channels=4,
    synthetic_size=64, synthetic_train=8, synthetic_val=2, synthetic_test=2,
    batch_size=4, epochs=2, initial_lr=0.01, deterministic=True,
)


def test_poly_lr_recipe_values():
    assert poly_lr(0, 1000, 0.001) == 0.001
    assert abs(poly_lr(500, 1000, 0.001, 0.9) - 0.001 * 0.5**0.9) <= 1e-15
    assert abs(poly_lr(500, 1000, 0.001, 0.9) - 5.3589e-4) <= 1e-8
    assert poly_lr(1000, 1000, 0.001) == 0.0


def test_poly_lr_past_end_warns():
    with pytest.warns(UserWarning):
        assert poly_lr(11, 10, 0.001) == 0.0
    with pytest.raises(ValueError):
        poly_lr(0, 0, 0.001)


@given(total=st.integers(1, 500), data=st.data())
@settings(max_examples=50, deadline=None)
def test_poly_lr_non_increasing(total, data):
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert poly_lr(b, total, 0.001) <= poly_lr(a, total, 0.001)


@pytest.mark.parametrize("decoupled", [True, False])
def test_optimizer_matches_scalar_reference(decoupled):
    cfg = TrainConfig(decoupled_weight_decay=decoupled, weight_decay=0.05, initial_lr=0.1)
    theta = torch.nn.Parameter(torch.tensor([1.5], dtype=torch.float64))
    opt = make_optimizer([theta], cfg)
    lrs = [poly_lr(k, 10, cfg.initial_lr) for k in range(10)]

    def grad(v):
        return 2.0 * (v - 3.0) + math.cos(v)

    got = []
    for lr in lrs:
        for g in opt.param_groups:
            g["lr"] = lr
        opt.zero_grad()
        loss = (theta - 3.0) ** 2 + torch.sin(theta)
        loss.sum().backward()
        opt.step()
        got.append(theta.item())
    want = oracles.adam_scalar(1.5, grad, 10, lrs, wd=0.05, decoupled=decoupled)
    for a, b in zip(got, want):
        assert abs(a - b) <= 1e-12


def test_synthetic_splits_are_disjoint():
    tr, va = resolve_dataset(TINY, "train"), resolve_dataset(TINY, "val")
    assert len(tr) == 8 and len(va) == 2
    assert not {s.key for s in tr} & {s.key for s in va}


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    return train(TINY.replace(max_steps=30, checkpoint_every=10), out_dir=tmp_path_factory.mktemp("smoke"))


def test_smoke_run_reduces_loss(smoke):
    losses = smoke.losses
    assert len(losses) == 30
    assert losses[29] < losses[0]


def test_smoke_run_artifacts(smoke):
    out = smoke.out_dir
    for name in ("train_log.jsonl", "last.ckpt", "best.ckpt", "weights.ddw", "step-10.ckpt", "step-30.ckpt"):
        assert (out / name).exists(), name
    lines = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert [e["step"] for e in lines] == list(range(1, 31))
    assert set(lines[0]) == {"step", "epoch", "loss", "lr", "grad_norm"}
    assert lines[0]["lr"] == TINY.initial_lr
    assert lines[14]["lr"] == pytest.approx(poly_lr(14, 30, TINY.initial_lr))
    # one validation report per epoch (2 batches per epoch)
    assert [v["epoch"] for v in smoke.val] == list(range(15))
    assert load_checkpoint(out / "last.ckpt").step == 30


def test_deterministic_runs_are_byte_identical(tmp_path):
    cfg = TINY.replace(max_steps=6)
    a = train(cfg, out_dir=tmp_path / "a")
    b = train(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "weights.ddw").read_bytes() == (tmp_path / "b" / "weights.ddw").read_bytes()
    assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()
    assert (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()
    assert a.losses == b.losses


@pytest.mark.parametrize("k", [3, 4])
def test_resume_reproduces_uninterrupted_run(smoke, tmp_path, k):
    cfg = TINY.replace(max_steps=10, checkpoint_every=1)
    full = train(cfg, out_dir=tmp_path / "full")
    resumed = train(cfg, out_dir=tmp_path / "resumed", resume=tmp_path / "full" / f"step-{k}.ckpt")
    assert resumed.losses == full.losses
    log = [json.loads(l) for l in (tmp_path / "resumed" / "train_log.jsonl").read_text().splitlines()]
    assert log[k]["step"] == k + 1
    assert log[k]["lr"] == poly_lr(k, 10, cfg.initial_lr)
    assert (tmp_path / "full" / "weights.ddw").read_bytes() == (tmp_path / "resumed" / "weights.ddw").read_bytes()


def test_resume_rejects_other_model(smoke, tmp_path):
    with pytest.raises(ConfigError):
        train(TINY.replace(width_multiplier=0.25, max_steps=2), out_dir=tmp_path, resume=smoke.out_dir / "step-10.ckpt")


def test_non_finite_loss_aborts_with_dump(tmp_path, monkeypatch):
    import ddunet.train as tr

    calls = []
    real = tr.focal_loss_with_logits

    def poisoned(logits, targets, cfg):
        calls.append(1)
        loss = real(logits, targets, cfg)
        return loss * float("nan") if len(calls) == 2 else loss

    monkeypatch.setattr(tr, "focal_loss_with_logits", poisoned)
    with pytest.raises(FloatingPointError):
        train(TINY.replace(max_steps=3), out_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_dump.json").read_text())
    assert {"step", "lr", "grad_norm"} <= set(dump)
    assert dump["step"] == 2
    assert dump["lr"] == poly_lr(1, 3, TINY.initial_lr)
