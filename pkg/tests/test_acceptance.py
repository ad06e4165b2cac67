"""Desk-scale acceptance suite: ten criteria, one summary line each.

Run alone with ``pytest tests/test_acceptance.py``; the PASS/FAIL lines are
printed in the terminal summary under "acceptance criteria".
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

import oracles
from conftest import ACCEPTANCE
from ddunet.ablation import ABLATION_COLUMNS, VARIANTS, ablate
from ddunet.attention import CBAM
from ddunet.config import TrainConfig
from ddunet.data import build_dataset_index
from ddunet.dcam import DCAM, DcamConfig, branch_receptive_field
from ddunet.encoder import EncoderConfig, ResNetEncoder
from ddunet.evaluate import Predictor, evaluate_samples, heatmap_array
from ddunet.losses import FocalConfig, focal_loss, focal_loss_with_logits
from ddunet.metrics import ConfusionCounts, compute_metrics
from ddunet.model import DDUNet, FuseHead, ModelConfig, SmallDecoder
from ddunet.train import poly_lr, resolve_dataset, train


@contextmanager
def criterion(n, name):
    info = {"detail": ""}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as e:
        ACCEPTANCE[n] = (name, False, f"{info['detail']} ({type(e).__name__}: {str(e)[:120]})".strip())
        raise
    ACCEPTANCE[n] = (name, True, f"{info['detail']} [{time.perf_counter() - start:.1f}s]".strip())


def randomize_(module, seed=0, scale=0.5):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
        for m in module.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.copy_(torch.randn(m.running_mean.shape, generator=g, dtype=m.running_mean.dtype) * 0.1)
                m.running_var.copy_(torch.rand(m.running_var.shape, generator=g, dtype=m.running_var.dtype) + 0.5)
    return module


def test_01_metric_formulas():
    with criterion(1, "metric formulas reproduce reference F1 values") as info:
        got = []
        for (a, b), want in (((8254, 7399), 0.7803), ((8765, 6549), 0.7497)):
            tp = a * b
            rep = compute_metrics(ConfusionCounts(tp=tp, fp=b * 10_000 - tp, fn=a * 10_000 - tp, tn=10**9))
            got.append(rep.f1)
            assert abs(rep.f1 - want) <= 5e-5
        info["detail"] = "f1 = " + ", ".join(f"{v:.5f}" for v in got)


def test_02_tiling(massroads_layout):
    with criterion(2, "tiling reproduces 9972/126 samples") as info:
        start = time.perf_counter()
        counts = build_dataset_index(massroads_layout, tile=512, stride=484).counts()
        elapsed = time.perf_counter() - start
        info["detail"] = f"{counts} in {elapsed:.1f}s"
        assert counts["train"] == 9972 and counts["val"] == 126
        assert elapsed < 30


def test_03_receptive_fields():
    with criterion(3, "cascade receptive fields [3, 7, 15]") as info:
        fields = [branch_receptive_field(DcamConfig().dilation_rates[: k + 1]) for k in range(3)]
        info["detail"] = str(fields)
        assert fields == [3, 7, 15] == DcamConfig().receptive_fields()


def test_04_shapes():
    with criterion(4, "shape suite") as info:
        start = time.perf_counter()
        enc = ResNetEncoder(EncoderConfig("small", 0.25)).eval()
        with torch.no_grad():
            pyr = enc(torch.randn(1, 3, 128, 128))
            assert [128 // p.shape[-1] for p in pyr] == [2, 4, 8, 16, 32]
            for h, w in ((16, 16), (1, 1), (5, 9)):
                assert DCAM(16).eval()(torch.randn(2, 16, h, w)).shape == (2, 16, h, w)
            assert SmallDecoder(8, (8, 8))(torch.randn(1, 8, 64, 64)).shape[-2:] == (256, 256)
            model = DDUNet(ModelConfig.small(0.25)).eval()
            for s in (32, 64, 96, 128):
                f = model(torch.randn(2, 3, s, s), return_features=True)
                assert tuple(f["logits"].shape) == (2, 1, s, s)
                assert tuple(f["fused"].shape) == (2, 256, s // 2, s // 2)
        elapsed = time.perf_counter() - start
        info["detail"] = f"{elapsed:.1f}s"
        assert elapsed < 60


def _probe_error(f, tensors, picks, h=1e-6):
    loss = f()
    grads = torch.autograd.grad(loss, tensors)
    analytic, numeric = [], []
    for ti, idx in picks:
        flat = tensors[ti].data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + h
            fp = f().item()
            flat[idx] = orig - h
            fm = f().item()
            flat[idx] = orig
        numeric.append((fp - fm) / (2 * h))
        analytic.append(grads[ti].view(-1)[idx].item())
    return oracles.relative_error([analytic], [numeric])


def test_05_gradient_checks():
    with criterion(5, "gradient checks (double)") as info:
        errs = {}
        # focal loss
        p = (torch.rand(1, 1, 4, 4, dtype=torch.float64) * 0.9 + 0.05).requires_grad_()
        y = (torch.rand(1, 1, 4, 4) > 0.5).double()
        ga = torch.autograd.grad(focal_loss(p, y), p)[0].numpy()
        gn = oracles.central_difference(lambda: focal_loss(p, y).detach(), [p], h=1e-6)
        errs["focal"] = oracles.relative_error([ga], gn)

        # CBAM and DCAM blocks on 1 x c x h x w inputs
        for name, block, shape in (
            ("cbam", CBAM(4, reduction=2), (1, 4, 6, 6)),
            ("dcam", randomize_(DCAM(2, DcamConfig(reduction=2)), seed=3).train(), (1, 2, 5, 5)),
        ):
            block = block.double()
            x = torch.randn(*shape, dtype=torch.float64, requires_grad=True)
            probe = torch.randn(*shape, dtype=torch.float64)
            tensors = [x] + list(block.parameters())
            analytic = [g.numpy() for g in torch.autograd.grad((block(x) * probe).sum(), tensors)]

            def fn(block=block, x=x, probe=probe):
                with torch.no_grad():
                    return (block(x) * probe).sum()

            errs[name] = oracles.relative_error(analytic, oracles.central_difference(fn, tensors))

        # end to end: 20 scalar parameters of a width-0.25 small-preset model
        torch.manual_seed(5)
        model = DDUNet(ModelConfig.small(0.25)).double().eval()
        x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
        target = (torch.rand(1, 32, 32) > 0.8).double()
        params = [p for p in model.parameters() if p.requires_grad]
        rng = np.random.default_rng(0)
        picks = []
        for ti in rng.choice(len(params), 20, replace=False):
            picks.append((int(ti), int(rng.integers(params[ti].numel()))))

        def e2e():
            return focal_loss_with_logits(model(x)[:, 0], target)

        errs["end_to_end"] = _probe_error(e2e, params, picks)
        info["detail"] = ", ".join(f"{k}={v:.1e}" for k, v in errs.items())
        assert errs["focal"] < 1e-6
        assert errs["cbam"] < 1e-4 and errs["dcam"] < 1e-4
        assert errs["end_to_end"] < 1e-3


def test_06_closed_form_values():
    with criterion(6, "closed-form loss and schedule values") as info:
        fl = focal_loss(torch.tensor([0.5], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64)).item()
        lr = poly_lr(500, 1000, 0.001, 0.9)
        p = torch.rand(64, dtype=torch.float64) * 0.98 + 0.01
        y = (torch.rand(64) > 0.5).double()
        ce_gap = abs(focal_loss(p, y, FocalConfig(gamma=0.0)).item() - torch.nn.functional.binary_cross_entropy(p, y).item())
        info["detail"] = f"focal={fl:.9f} lr={lr:.4e} |fl0-ce|={ce_gap:.1e}"
        assert abs(fl - 0.25 * math.log(2)) <= 1e-9
        assert abs(lr - 5.3589e-4) <= 1e-8
        assert ce_gap <= 1e-12


def test_07_oracle_equivalence():
    with criterion(7, "block forwards match loop oracles") as info:
        errs = {}
        cbam = randomize_(CBAM(4, reduction=2).double(), seed=1)
        x = torch.randn(1, 4, 6, 6, dtype=torch.float64)
        errs["cbam"] = np.abs(cbam(x)[0].detach().numpy() - oracles.cbam(x[0].numpy(), oracles.cbam_params(cbam))).max()

        dcam = randomize_(DCAM(2).double(), seed=2).eval()
        x = torch.randn(1, 2, 5, 5, dtype=torch.float64)
        errs["dcam"] = np.abs(dcam(x)[0].detach().numpy() - oracles.dcam(x[0].numpy(), dcam)).max()

        head = randomize_(FuseHead(5, fused_channels=4, head_channels=3).double(), seed=3).eval()
        large, small = torch.randn(1, 3, 8, 8, dtype=torch.float64), torch.randn(1, 2, 8, 8, dtype=torch.float64)
        with torch.no_grad():
            logits, fused = head(large, small, return_fused=True)
        want_logits, want_fused = oracles.fuse_head(large[0].numpy(), small[0].numpy(), head)
        errs["fuse_head"] = max(np.abs(logits[0].numpy() - want_logits).max(), np.abs(fused[0].numpy() - want_fused).max())

        feat = torch.randn(6, 7, 5, dtype=torch.float64)
        errs["heatmap"] = np.abs(heatmap_array(feat).numpy() - oracles.minmax_255(oracles.channel_mean(feat.numpy()))).max()
        info["detail"] = ", ".join(f"{k}={v:.1e}" for k, v in errs.items())
        assert all(v <= 1e-12 for v in errs.values())


def test_08_overfit(tmp_path):
    with criterion(8, "overfit 8 synthetic samples to IoU >= 0.95") as info:
        cfg = TrainConfig(depth_preset="small", width_multiplier=0.25, synthetic_train=8, synthetic_val=0,
                          synthetic_size=128, batch_size=4, max_steps=300, seed=0)
        start = time.perf_counter()
        res = train(cfg, out_dir=tmp_path)
        report, _, _ = evaluate_samples(Predictor(res.model), resolve_dataset(cfg, "train"))
        elapsed = time.perf_counter() - start
        info["detail"] = f"IoU={report.iou_road:.4f} after {len(res.steps)} steps in {elapsed:.0f}s"
        assert len(res.steps) <= 300
        assert report.iou_road >= 0.95
        assert elapsed < 600


def test_09_ablation_harness(tmp_path):
    with criterion(9, "ablation harness emits 3 x 5 report") as info:
        cfg = TrainConfig(depth_preset="small", width_multiplier=0.125, synthetic_size=64, synthetic_train=8,
                          synthetic_val=4, max_steps=4, seed=0)
        payload = ablate(cfg, tmp_path, split="val")
        stored = json.loads((tmp_path / "ablation.json").read_text())
        info["detail"] = "mIoU ordering (recorded): " + " < ".join(payload["miou_ordering"])
        assert not payload["errors"]
        assert [r["method"] for r in payload["rows"]] == [n for n, _ in VARIANTS]
        assert all(set(r) == {"method", *ABLATION_COLUMNS} for r in payload["rows"])
        assert len(ABLATION_COLUMNS) == 5
        assert stored["rows"] == payload["rows"]


def test_10_determinism(tmp_path):
    with criterion(10, "deterministic runs are byte-identical") as info:
        cfg = TrainConfig(depth_preset="small", width_multiplier=0.125, synthetic_size=64, synthetic_train=8,
                          synthetic_val=2, batch_size=4, max_steps=8, deterministic=True, seed=7)
        train(cfg, out_dir=tmp_path / "a")
        train(cfg, out_dir=tmp_path / "b")
        same_w = (tmp_path / "a" / "weights.ddw").read_bytes() == (tmp_path / "b" / "weights.ddw").read_bytes()
        same_log = (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()
        info["detail"] = f"weights equal={same_w}, logs equal={same_log}"
        assert same_w and same_log
