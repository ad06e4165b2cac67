"""Dilated convolution attention module.

A single cascade of dilated 3x3 convs (rates 1, 2, 4 by default) is tapped
after every conv; each tap and a global-average-pooling branch pass through
their own CBAM, then the four streams are concatenated and reduced back to
the input width by a 1x1 conv.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import CBAM

__all__ = ["DcamConfig", "DCAM", "GapBranch", "branch_receptive_field"]


def branch_receptive_field(rates, kernel_size=3):
    """Receptive field of a stride-1 cascade of dilated convs."""
    if kernel_size < 1 or kernel_size % 2 != 1:
        raise ValueError(f"kernel_size must be a positive odd number, got {kernel_size}")
    return 1 + (kernel_size - 1) * sum(rates)


@dataclass(frozen=True)
class DcamConfig:
    dilation_rates: tuple = (1, 2, 4)
    kernel_size: int = 3
    reduction: int = 16
    cbam_padding_mode: str = "zeros"
    gap_activation: str = "relu"

    def __post_init__(self):
        rates = tuple(int(r) for r in self.dilation_rates)
        object.__setattr__(self, "dilation_rates", rates)
        if not rates:
            raise ValueError("dilation_rates must be nonempty")
        if any(r < 1 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"dilation_rates must be positive and strictly increasing, got {rates}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")

    def receptive_fields(self):
        return [branch_receptive_field(self.dilation_rates[: k + 1], self.kernel_size) for k in range(len(self.dilation_rates))]


class GapBranch(nn.Module):
    """Image-level feature: global mean -> 1x1 conv -> activation -> replicate to input size."""

    def __init__(self, channels, activation="relu"):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 1)
        if activation == "relu":
            self.act = nn.ReLU()
        elif activation == "identity":
            self.act = nn.Identity()
        else:
            raise ValueError(f"unknown activation {activation!r}")

    def forward(self, x):
        g = self.act(self.conv(x.mean(dim=(2, 3), keepdim=True)))
        return g.expand_as(x)


class DCAM(nn.Module):
    def __init__(self, channels, cfg=None):
        super().__init__()
        cfg = cfg or DcamConfig()
        self.cfg = cfg
        self.channels = channels
        k = cfg.kernel_size
        self.cascade = nn.ModuleList()
        for rate in cfg.dilation_rates:
            self.cascade.append(
                nn.Sequential(
                    nn.Conv2d(channels, channels, k, padding=rate * (k - 1) // 2, dilation=rate, bias=False),
                    nn.BatchNorm2d(channels),
                    nn.ReLU(),
                )
            )
        self.gap = GapBranch(channels, cfg.gap_activation)
        n_branches = len(cfg.dilation_rates) + 1
        self.attn = nn.ModuleList(
            CBAM(channels, cfg.reduction, padding_mode=cfg.cbam_padding_mode) for _ in range(n_branches)
        )
        self.reduce = nn.Conv2d(n_branches * channels, channels, 1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(f"DCAM built for {self.channels} channels, got input of shape {tuple(x.shape)}")
        taps = []
        h = x
        for conv in self.cascade:
            h = conv(h)
            taps.append(h)
        taps.append(self.gap(x))
        branches = [attn(t) for attn, t in zip(self.attn, taps)]
        return self.reduce(torch.cat(branches, dim=1))
