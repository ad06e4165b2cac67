"""ResNet-style encoder exposing a five-level feature pyramid.

Parameter names follow torchvision's ResNet layout (conv1, bn1, layer1..layer4),
so a torchvision state dict exported to a weight archive loads directly.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch.nn as nn

from . import archive

log = logging.getLogger(__name__)

__all__ = ["EncoderConfig", "ResNetEncoder", "LoadReport", "load_pretrained", "PRESETS"]

# planes per stage, blocks per stage, block type
PRESETS = {
    "resnet50": dict(stem=64, planes=(64, 128, 256, 512), blocks=(3, 4, 6, 3), block="bottleneck"),
    "small": dict(stem=64, planes=(64, 128, 256, 512), blocks=(1, 1, 1, 1), block="basic"),
}
_ALIASES = {"resnet50-like": "resnet50"}


@dataclass(frozen=True)
class EncoderConfig:
    depth_preset: str = "resnet50"
    width_multiplier: float = 1.0
    pretrained_weights: Optional[str] = None
    freeze_bn: bool = False

    def __post_init__(self):
        preset = _ALIASES.get(self.depth_preset, self.depth_preset)
        if preset not in PRESETS:
            raise ValueError(f"unknown depth_preset {self.depth_preset!r}; choose from {sorted(PRESETS)}")
        object.__setattr__(self, "depth_preset", preset)
        if not self.width_multiplier > 0:
            raise ValueError("width_multiplier must be positive")

    def scale(self, c):
        return max(1, int(round(c * self.width_multiplier)))

    def stage_channels(self):
        p = PRESETS[self.depth_preset]
        expansion = 4 if p["block"] == "bottleneck" else 1
        return [self.scale(p["stem"])] + [self.scale(pl) * expansion for pl in p["planes"]]


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, inplanes, planes, stride=1, downsample=None):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, inplanes, planes, stride=1, downsample=None):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, planes * 4, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * 4)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNetEncoder(nn.Module):
    """Five downsamplings: stem conv, max-pool, and the strided first blocks of layer2..layer4.

    forward() returns the list of stage outputs at strides 2, 4, 8, 16, 32.
    """

    multiple = 32

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or EncoderConfig()
        self.cfg = cfg
        p = PRESETS[cfg.depth_preset]
        block = Bottleneck if p["block"] == "bottleneck" else BasicBlock
        stem = cfg.scale(p["stem"])
        self.conv1 = nn.Conv2d(3, stem, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(stem)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.inplanes = stem
        for i, (planes, n) in enumerate(zip(p["planes"], p["blocks"])):
            stride = 1 if i == 0 else 2
            setattr(self, f"layer{i + 1}", self._make_layer(block, cfg.scale(planes), n, stride))
        self.channels = cfg.stage_channels()

        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def _make_layer(self, block, planes, n, stride):
        downsample = None
        if stride != 1 or self.inplanes != planes * block.expansion:
            downsample = nn.Sequential(
                nn.Conv2d(self.inplanes, planes * block.expansion, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes * block.expansion),
            )
        layers = [block(self.inplanes, planes, stride, downsample)]
        self.inplanes = planes * block.expansion
        layers += [block(self.inplanes, planes) for _ in range(1, n)]
        return nn.Sequential(*layers)

    def train(self, mode=True):
        super().train(mode)
        if mode and self.cfg.freeze_bn:
            for m in self.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.eval()
        return self

    def forward(self, x) -> List:
        h, w = x.shape[-2:]
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"encoder expects a (B, 3, H, W) image, got {tuple(x.shape)}")
        if h % self.multiple or w % self.multiple:
            raise ValueError(f"image height and width must be multiples of {self.multiple}, got {h}x{w}")
        s1 = self.relu(self.bn1(self.conv1(x)))
        s2 = self.layer1(self.maxpool(s1))
        s3 = self.layer2(s2)
        s4 = self.layer3(s3)
        s5 = self.layer4(s4)
        return [s1, s2, s3, s4, s5]


@dataclass
class LoadReport:
    matched: List[str] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)
    unexpected: List[str] = field(default_factory=list)

    @property
    def fraction_matched(self):
        total = len(self.matched) + len(self.missing)
        return len(self.matched) / total if total else 1.0


def load_pretrained(encoder, source, strict_shapes=True):
    """Copy every name- and shape-matching tensor from a weight archive into ``encoder``.

    ``source`` is an archive path or an already-loaded name->tensor mapping. Names
    may carry an ``encoder.`` prefix (as in full-model archives). A matched name
    with the wrong shape raises; missing names keep their random init and are
    listed in the returned report.
    """
    tensors = archive.load(source).tensors if not isinstance(source, dict) else source
    if any(k.startswith("encoder.") for k in tensors):
        tensors = {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}

    report = LoadReport()
    state = encoder.state_dict()
    update = {}
    for name, param in state.items():
        if name not in tensors:
            report.missing.append(name)
            continue
        src = tensors[name]
        if tuple(src.shape) != tuple(param.shape):
            if strict_shapes:
                raise ValueError(
                    f"shape mismatch for tensor {name!r}: archive has {tuple(src.shape)}, encoder expects {tuple(param.shape)}"
                )
            report.missing.append(name)
            continue
        update[name] = src.to(dtype=param.dtype)
        report.matched.append(name)
    report.unexpected = sorted(set(tensors) - set(state))
    encoder.load_state_dict(update, strict=False)
    for name in report.missing:
        log.warning("pretrained archive has no tensor %s; keeping random init", name)
    return report
