"""Checkpoints and model weight files, both stored as named-tensor archives.

A checkpoint holds ``model.*`` tensors, ``optim.<param index>.<key>`` Adam
state tensors and JSON metadata (config snapshot, counters, log history). A
weights file holds only the model state dict under its plain names.
"""

from dataclasses import dataclass, field

import torch

from . import archive
from .config import ConfigError, TrainConfig
from .model import DDUNet

__all__ = [
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_weights",
    "config_snapshot",
    "model_from_config",
    "check_model_compatible",
    "MODEL_KEYS",
]

CHECKPOINT_KIND = "ddunet-checkpoint"
WEIGHTS_KIND = "ddunet-weights"

# config keys that change the network's parameter layout
MODEL_KEYS = (
    "depth_preset",
    "width_multiplier",
    "dilation_rates",
    "kernel_size",
    "reduction_ratio",
    "large_widths",
    "small_widths",
    "fused_channels",
    "head_channels",
    "upsample_mode",
    "use_dcam",
    "use_small_decoder",
)


def config_snapshot(cfg):
    d = cfg.to_dict()
    d.pop("out_dir")
    return d


def model_from_config(cfg):
    return DDUNet(cfg.model_config())


def check_model_compatible(a, b):
    diff = [k for k in MODEL_KEYS if getattr(a, k) != getattr(b, k)]
    if diff:
        raise ConfigError(
            "config does not match the checkpoint's model: "
            + ", ".join(f"{k}={getattr(a, k)!r} vs {getattr(b, k)!r}" for k in diff)
        )


@dataclass
class Checkpoint:
    config: TrainConfig
    model_state: dict
    optim_state: dict = None
    meta: dict = field(default_factory=dict)

    @property
    def step(self):
        return self.meta.get("step", 0)

    def build_model(self):
        model = model_from_config(self.config)
        model.load_state_dict(self.model_state, strict=True)
        return model


def save_checkpoint(path, model, optimizer, cfg, **meta):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    groups = []
    if optimizer is not None:
        sd = optimizer.state_dict()
        for idx, st in sorted(sd["state"].items()):
            for k, v in st.items():
                tensors[f"optim.{idx}.{k}"] = v if torch.is_tensor(v) else torch.tensor(v)
        groups = sd["param_groups"]
    metadata = {"kind": CHECKPOINT_KIND, "config": config_snapshot(cfg), "param_groups": groups, **meta}
    return archive.save(path, tensors, metadata)


def save_weights(path, model, cfg=None):
    metadata = {"kind": WEIGHTS_KIND}
    if cfg is not None:
        metadata["config"] = config_snapshot(cfg)
    return archive.save(path, model.state_dict(), metadata)


def load_checkpoint(path):
    arc = archive.load(path)
    meta = dict(arc.metadata)
    kind = meta.pop("kind", None)
    if kind not in (CHECKPOINT_KIND, WEIGHTS_KIND):
        raise ValueError(f"{path}: not a checkpoint or weights archive")
    if "config" not in meta:
        raise ValueError(f"{path}: archive carries no config snapshot")
    cfg = TrainConfig.from_dict(meta.pop("config"))
    if kind == WEIGHTS_KIND:
        return Checkpoint(cfg, arc.tensors, None, meta)
    model_state, state = {}, {}
    for name, t in arc.tensors.items():
        head, rest = name.split(".", 1)
        if head == "model":
            model_state[rest] = t
        else:
            idx, key = rest.split(".", 1)
            state.setdefault(int(idx), {})[key] = t
    groups = meta.pop("param_groups", [])
    optim_state = {"state": state, "param_groups": groups} if groups else None
    return Checkpoint(cfg, model_state, optim_state, meta)
