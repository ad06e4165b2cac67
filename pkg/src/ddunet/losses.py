from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = ["FocalConfig", "focal_loss", "focal_loss_with_logits"]


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    probability_floor: float = 1e-7

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 < self.probability_floor < 0.5:
            raise ValueError("probability_floor must lie in (0, 0.5)")


def _check(a, targets):
    if a.shape != targets.shape:
        raise ValueError(f"shape mismatch: predictions {tuple(a.shape)} vs targets {tuple(targets.shape)}")


def focal_loss(probs, targets, cfg=FocalConfig()):
    """Mean of -(1 - p_t)^gamma * ln(p_t) over all pixels, with p clamped to [floor, 1 - floor]."""
    _check(probs, targets)
    targets = targets.to(probs.dtype)
    p = probs.clamp(cfg.probability_floor, 1.0 - cfg.probability_floor)
    pt = torch.where(targets > 0.5, p, 1.0 - p)
    return (-((1.0 - pt) ** cfg.gamma) * torch.log(pt)).mean()


def focal_loss_with_logits(logits, targets, cfg=FocalConfig()):
    """Same loss computed from logits via log-sigmoid; no clamping needed.

    Agrees with ``focal_loss(sigmoid(logits))`` wherever the probabilities sit
    inside the clamp bounds.
    """
    _check(logits, targets)
    targets = targets.to(logits.dtype)
    signed = torch.where(targets > 0.5, logits, -logits)
    log_pt = F.logsigmoid(signed)
    pt = torch.exp(log_pt)
    return (-((1.0 - pt) ** cfg.gamma) * log_pt).mean()
