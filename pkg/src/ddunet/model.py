"""Dual-decoder U-Net: encoder -> DCAM -> large + small decoder -> fusion head."""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .dcam import DCAM, DcamConfig
from .encoder import EncoderConfig, ResNetEncoder

__all__ = [
    "DecoderConfig",
    "ModelConfig",
    "UpBlock",
    "LargeDecoder",
    "SmallDecoder",
    "FuseHead",
    "DDUNet",
    "predict_mask",
    "FEATURE_TAGS",
]

FEATURE_TAGS = ("large_decoder_out", "small_decoder_out", "fused", "logits")


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder widths; ``None`` widths are derived from the encoder by halving per up-stage."""

    large_widths: Optional[Tuple[int, ...]] = None
    small_widths: Optional[Tuple[int, ...]] = None
    fused_channels: int = 256
    head_channels: int = 32
    upsample_mode: str = "transposed"

    def __post_init__(self):
        if self.upsample_mode not in ("transposed", "bilinear"):
            raise ValueError(f"upsample_mode must be 'transposed' or 'bilinear', got {self.upsample_mode!r}")
        if self.large_widths is not None and len(self.large_widths) != 4:
            raise ValueError("large decoder needs exactly 4 widths")
        if self.small_widths is not None and len(self.small_widths) != 2:
            raise ValueError("small decoder needs exactly 2 widths")

    def resolve(self, enc_channels):
        c3, c5 = enc_channels[2], enc_channels[4]
        large = self.large_widths or tuple(max(1, c5 // 2 ** (k + 1)) for k in range(4))
        small = self.small_widths or tuple(max(1, c3 // 2 ** (k + 1)) for k in range(2))
        return replace(self, large_widths=tuple(large), small_widths=tuple(small))


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dcam: DcamConfig = field(default_factory=DcamConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    use_dcam: bool = True
    use_small_decoder: bool = True

    @classmethod
    def small(cls, width=0.25, **kw):
        return cls(encoder=EncoderConfig("small", width), **kw)


def conv_bn_relu(cin, cout, k=3):
    return nn.Sequential(nn.Conv2d(cin, cout, k, padding=k // 2, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


def upsampler(cin, cout, mode):
    if mode == "transposed":
        return nn.ConvTranspose2d(cin, cout, 2, stride=2)
    return nn.Sequential(nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False), nn.Conv2d(cin, cout, 3, padding=1))


class UpBlock(nn.Module):
    """x2 upsample, optional skip concatenation, then 3x3 conv-BN-ReLU."""

    def __init__(self, cin, cout, skip_channels=0, mode="transposed"):
        super().__init__()
        self.up = upsampler(cin, cout, mode)
        self.conv = conv_bn_relu(cout + skip_channels, cout)
        self.skip_channels = skip_channels

    def forward(self, x, skip=None):
        x = self.up(x)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.conv(x)


class LargeDecoder(nn.Module):
    def __init__(self, enc_channels, widths, mode="transposed"):
        super().__init__()
        cin = enc_channels[4]
        blocks = []
        for w, skip_c in zip(widths, reversed(enc_channels[:4])):
            blocks.append(UpBlock(cin, w, skip_c, mode))
            cin = w
        self.blocks = nn.ModuleList(blocks)
        self.out_channels = cin

    def forward(self, pyramid, top):
        if tuple(top.shape) != tuple(pyramid[4].shape):
            raise ValueError(f"DCAM output shape {tuple(top.shape)} does not match stage 5 shape {tuple(pyramid[4].shape)}")
        x = top
        for block, level in zip(self.blocks, (4, 3, 2, 1)):
            skip = pyramid[level - 1]
            if skip.shape[-2:] != (x.shape[-2] * 2, x.shape[-1] * 2):
                raise ValueError(
                    f"skip from stage {level} has spatial size {tuple(skip.shape[-2:])}, "
                    f"expected {(x.shape[-2] * 2, x.shape[-1] * 2)}"
                )
            x = block(x, skip)
        return x


class SmallDecoder(nn.Module):
    """Lifts the stride-8 stage to stride 2 with two skip-free up-stages."""

    def __init__(self, cin, widths, mode="transposed"):
        super().__init__()
        blocks = []
        for w in widths:
            blocks.append(UpBlock(cin, w, 0, mode))
            cin = w
        self.blocks = nn.ModuleList(blocks)
        self.out_channels = cin

    def forward(self, x, image_size=None):
        if image_size is not None and tuple(x.shape[-2:]) != (image_size[0] // 8, image_size[1] // 8):
            raise ValueError(
                f"small decoder expects the stride-8 feature ({image_size[0] // 8}x{image_size[1] // 8}), "
                f"got {tuple(x.shape[-2:])}"
            )
        for block in self.blocks:
            x = block(x)
        return x


class FuseHead(nn.Module):
    """Concat -> 1x1 conv-BN-ReLU to ``fused_channels`` -> x2 upsample -> ReLU -> 3x3 conv to one logit map."""

    def __init__(self, in_channels, fused_channels=256, head_channels=32, mode="transposed"):
        super().__init__()
        self.fuse = conv_bn_relu(in_channels, fused_channels, k=1)
        self.up = upsampler(fused_channels, head_channels, mode)
        self.act = nn.ReLU(inplace=True)
        self.classifier = nn.Conv2d(head_channels, 1, 3, padding=1)

    def forward(self, large, small=None, return_fused=False):
        if small is not None:
            if large.shape[-2:] != small.shape[-2:]:
                raise ValueError(
                    f"decoder outputs disagree spatially: large {tuple(large.shape[-2:])} vs small {tuple(small.shape[-2:])}"
                )
            x = torch.cat([large, small], dim=1)
        else:
            x = large
        fused = self.fuse(x)
        logits = self.classifier(self.act(self.up(fused)))
        return (logits, fused) if return_fused else logits


class DDUNet(nn.Module):
    """Outputs raw logits of shape (B, 1, H, W); H and W must be multiples of 32."""

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.encoder = ResNetEncoder(cfg.encoder)
        ch = self.encoder.channels
        dec = cfg.decoder.resolve(ch)
        self.cfg = replace(cfg, decoder=dec)
        self.dcam = DCAM(ch[4], cfg.dcam) if cfg.use_dcam else None
        self.large_decoder = LargeDecoder(ch, dec.large_widths, dec.upsample_mode)
        self.small_decoder = SmallDecoder(ch[2], dec.small_widths, dec.upsample_mode) if cfg.use_small_decoder else None
        head_in = self.large_decoder.out_channels + (self.small_decoder.out_channels if self.small_decoder else 0)
        self.head = FuseHead(head_in, dec.fused_channels, dec.head_channels, dec.upsample_mode)

    def forward(self, x, return_features=False):
        pyramid = self.encoder(x)
        top = self.dcam(pyramid[4]) if self.dcam is not None else pyramid[4]
        large = self.large_decoder(pyramid, top)
        small = self.small_decoder(pyramid[2], x.shape[-2:]) if self.small_decoder is not None else None
        logits, fused = self.head(large, small, return_fused=True)
        if not return_features:
            return logits
        return {
            "pyramid": pyramid,
            "dcam_out": top,
            "large_decoder_out": large,
            "small_decoder_out": small,
            "fused": fused,
            "logits": logits,
        }


def predict_mask(logits, threshold=0.5):
    """Binary mask: 1 where sigmoid(logit) >= threshold (ties go to road)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if logits.dim() == 4 and logits.shape[1] != 1:
        raise ValueError("predict_mask expects single-channel logits")
    return (torch.sigmoid(logits) >= threshold).to(torch.uint8)
