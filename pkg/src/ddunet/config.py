"""Training configuration and its flat ``key = value`` file format.

Blank lines and ``#`` comments are ignored; tuples are comma-separated;
booleans accept true/false/yes/no/1/0. Any key that is not a TrainConfig
field is an error.
"""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Tuple

from .dcam import DcamConfig
from .encoder import EncoderConfig
from .losses import FocalConfig
from .model import DecoderConfig, ModelConfig

__all__ = ["TrainConfig", "ConfigError", "load_config", "parse_config", "dump_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # optimisation (defaults are the full-scale recipe)
    optimizer: str = "adam"
    initial_lr: float = 0.001
    schedule: str = "poly"
    poly_power: float = 0.9
    weight_decay: float = 5e-4
    decoupled_weight_decay: bool = True
    batch_size: int = 4
    epochs: int = 50
    max_steps: int = 0  # 0: epochs * batches_per_epoch
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping

    # loss
    focal_gamma: float = 2.0
    probability_floor: float = 1e-7

    # model
    depth_preset: str = "resnet50"
    width_multiplier: float = 1.0
    pretrained_weights: str = ""
    freeze_bn: bool = False
    dilation_rates: Tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 3
    reduction_ratio: int = 16
    cbam_padding_mode: str = "zeros"
    large_widths: Tuple[int, ...] = ()
    small_widths: Tuple[int, ...] = ()
    fused_channels: int = 256
    head_channels: int = 32
    upsample_mode: str = "transposed"
    use_dcam: bool = True
    use_small_decoder: bool = True

    # data
    seed: int = 0
    dataset: str = "synthetic"
    tile_size: int = 512
    stride: int = 484
    binarize_threshold: int = 127
    augment: bool = False
    synthetic_seed: int = 0
    synthetic_size: int = 128
    synthetic_train: int = 64
    synthetic_val: int = 16
    synthetic_test: int = 8

    # run
    threshold: float = 0.5
    deterministic: bool = False
    checkpoint_every: int = 0  # steps; 0: only per epoch
    out_dir: str = "runs/ddunet"

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.schedule != "poly":
            raise ConfigError(f"unsupported schedule {self.schedule!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")

    def focal(self):
        return FocalConfig(self.focal_gamma, self.probability_floor)

    def model_config(self):
        return ModelConfig(
            encoder=EncoderConfig(self.depth_preset, self.width_multiplier, self.pretrained_weights or None, self.freeze_bn),
            dcam=DcamConfig(self.dilation_rates, self.kernel_size, self.reduction_ratio, self.cbam_padding_mode),
            decoder=DecoderConfig(
                self.large_widths or None, self.small_widths or None, self.fused_channels, self.head_channels, self.upsample_mode
            ),
            use_dcam=self.use_dcam,
            use_small_decoder=self.use_small_decoder,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**_coerce_all(d))


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _coerce(name, typ, value):
    if isinstance(value, str):
        value = value.strip()
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            v = str(value).lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return str(value)
        # Tuple[int, ...]
        if isinstance(value, str):
            return tuple(int(v) for v in value.split(",") if v.strip())
        return tuple(int(v) for v in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {name}: {value!r}") from e


def _coerce_all(d):
    types = {f.name: f.type for f in fields(TrainConfig)}
    unknown = sorted(set(d) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for k, v in d.items():
        out[k] = _coerce(k, types[k], v)
    return out


def parse_config(text):
    d = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        d[k] = v
    return d


def load_config(path=None, overrides=None):
    d = parse_config(Path(path).read_text()) if path else {}
    d.update(overrides or {})
    return TrainConfig.from_dict(d)


def dump_config(cfg):
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
