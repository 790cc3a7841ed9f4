"""Soft DICE, signed-distance boundary loss and their sigmoid-weighted blend."""
from __future__ import annotations

import math

import numpy as np
import torch

from .sdm import signed_distance

DICE_EPS = 1e-5


def dice_loss(prob: torch.Tensor, label: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    if prob.shape != label.shape:
        raise ValueError(f"shape mismatch: prob {tuple(prob.shape)} vs label {tuple(label.shape)}")
    inter = (prob * label).sum()
    return 1.0 - (2.0 * inter + eps) / (prob.sum() + label.sum() + eps)


def normalized_sdm(label: np.ndarray, band: float = 10.0) -> np.ndarray:
    """Label SDM clipped to +-band and divided by band, so it lies in [-1, 1]."""
    d = signed_distance(np.asarray(label, dtype=bool), band)
    return (np.clip(d, -band, band) / band).astype(np.float32)


def boundary_loss(prob: torch.Tensor, label_sdm: torch.Tensor) -> torch.Tensor:
    """Mean of ``prob * -sdm``: probability inside the label is rewarded, outside penalized
    in proportion to the distance from the boundary."""
    if prob.shape != label_sdm.shape:
        raise ValueError(f"shape mismatch: prob {tuple(prob.shape)} vs sdm {tuple(label_sdm.shape)}")
    return (prob * -label_sdm).mean()


def dynamic_weight(loss1, offset: float = 0.5, temperature: float = 1.0, hard: bool = False):
    """Weight on the DICE term. High while DICE loss is large, fading once regions overlap."""
    if isinstance(loss1, torch.Tensor):
        if hard:
            return (loss1 > offset).to(loss1.dtype)
        return torch.sigmoid((loss1 - offset) / temperature)
    if hard:
        return float(loss1 > offset)
    return 1.0 / (1.0 + math.exp(-(loss1 - offset) / temperature))


def dynamic_loss(loss1, loss2, offset: float = 0.5, temperature: float = 1.0,
                 hard: bool = False):
    w = dynamic_weight(loss1, offset, temperature, hard)
    return w * loss1 + (1 - w) * loss2
