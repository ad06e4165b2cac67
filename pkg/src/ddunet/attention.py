"""CBAM: channel attention followed by spatial attention."""

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["ChannelAttention", "SpatialAttention", "CBAM", "hidden_width"]

_ACTIVATIONS = {
    "relu": nn.ReLU,
    "identity": nn.Identity,
}


def hidden_width(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


class ChannelAttention(nn.Module):
    """Per-channel gate from a shared two-layer MLP over avg- and max-pooled descriptors.

    Returns weights of shape (B, C); multiply with the input yourself or use CBAM.
    """

    def __init__(self, channels, reduction=16, activation="relu"):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.channels = channels
        hidden = hidden_width(channels, reduction)
        # one MLP shared by both pooling paths
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden),
            _ACTIVATIONS[activation](),
            nn.Linear(hidden, channels),
        )

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"channel attention built for {self.channels} channels, got input of shape {tuple(x.shape)}"
            )
        avg = x.mean(dim=(2, 3))
        mx = x.amax(dim=(2, 3))
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))


class SpatialAttention(nn.Module):
    """Spatial gate: 7x7 conv over [channel-mean; channel-max], same-size output (B, 1, H, W)."""

    def __init__(self, kernel_size=7, padding_mode="zeros"):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("spatial attention kernel must be odd")
        if padding_mode == "zero":
            padding_mode = "zeros"
        if padding_mode not in ("zeros", "reflect"):
            raise ValueError(f"unsupported padding mode {padding_mode!r}")
        self.padding_mode = padding_mode
        self.pad = kernel_size // 2
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=0, bias=True)

    def forward(self, x):
        if x.dim() != 4 or x.shape[2] < 1 or x.shape[3] < 1:
            raise ValueError(f"spatial attention needs a (B, C, H>=1, W>=1) input, got {tuple(x.shape)}")
        stacked = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        p = self.pad
        if self.padding_mode == "reflect" and min(x.shape[2], x.shape[3]) > p:
            stacked = F.pad(stacked, (p, p, p, p), mode="reflect")
        else:
            # reflect needs at least pad+1 pixels per side; small maps fall back to zeros
            stacked = F.pad(stacked, (p, p, p, p))
        return torch.sigmoid(self.conv(stacked))


class CBAM(nn.Module):
    def __init__(self, channels, reduction=16, activation="relu", kernel_size=7, padding_mode="zeros"):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction, activation)
        self.spatial = SpatialAttention(kernel_size, padding_mode)

    def forward(self, x):
        x = x * self.channel(x)[:, :, None, None]
        return x * self.spatial(x)
