"""Dual-decoder U-Net (DDU-Net) for road extraction from aerial imagery."""

from .attention import CBAM, ChannelAttention, SpatialAttention
from .config import TrainConfig, load_config
from .dcam import DCAM, DcamConfig, GapBranch, branch_receptive_field
from .encoder import EncoderConfig, ResNetEncoder, load_pretrained
from .losses import FocalConfig, focal_loss, focal_loss_with_logits
from .metrics import ConfusionCounts, MetricsReport, accumulate_confusion, compute_metrics
from .model import DDUNet, DecoderConfig, ModelConfig, predict_mask

__version__ = "0.1.0"
