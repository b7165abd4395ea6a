"""Segmentation head and the boundary-weighted BCE + IoU loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import layers as L
from .adapter import FeaturePyramid
from .nn import Conv2d, Module
from .tensor import Tensor, as_tensor, clip, concat, log, reshape

PROB_EPS = 1e-7
EDGE_WINDOW = 31
EDGE_GAIN = 5.0


@dataclass
class PredictionMask:
    logits: Tensor
    probs: Tensor


class Decoder(Module):
    """Top-down fusion of the three pyramid levels into one logit map."""

    def __init__(self, rng, dim: int, hidden: int | None = None):
        hidden = dim // 2 if hidden is None else hidden
        self.merge2 = Conv2d(rng, 2 * dim, hidden, 1)
        self.merge1 = Conv2d(rng, dim + hidden, hidden, 1)
        self.out = Conv2d(rng, hidden, 1, 3)

    def __call__(self, pyr: FeaturePyramid, out_size: tuple[int, int]) -> PredictionMask:
        if len(pyr.levels) != 3:
            raise ValueError(f"decoder expects 3 pyramid levels, got {len(pyr.levels)}")
        fine, mid, coarse = pyr.levels
        up = L.bilinear_resize(coarse, mid.shape[0], mid.shape[1])
        p2 = L.gelu(self.merge2(concat([mid, up], axis=-1)))
        up = L.bilinear_resize(p2, fine.shape[0], fine.shape[1])
        p1 = L.gelu(self.merge1(concat([fine, up], axis=-1)))
        logits = L.bilinear_resize(self.out(p1), out_size[0], out_size[1])
        logits = reshape(logits, out_size)
        return PredictionMask(logits, L.sigmoid(logits))


def decode(pyr: FeaturePyramid, head: Decoder, out_size: tuple[int, int]) -> PredictionMask:
    return head(pyr, out_size)


def edge_window(h: int, w: int) -> int:
    if EDGE_WINDOW <= min(h, w):
        return EDGE_WINDOW
    return (min(h, w) // 2) * 2 + 1


def boundary_weights(gt: np.ndarray) -> np.ndarray:
    """1 + 5 |local mean(gt) - gt|; the local mean counts zero padding."""
    gt = np.asarray(gt, dtype=np.float64)
    k = edge_window(*gt.shape)
    local = uniform_filter(gt, size=k, mode="constant", cval=0.0)
    return 1.0 + EDGE_GAIN * np.abs(local - gt)


def _check_gt(gt, shape) -> np.ndarray:
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if gt.shape != tuple(shape):
        raise ValueError(f"mask shape {gt.shape} does not match prediction {tuple(shape)}")
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground-truth mask must be binary (0/1)")
    return gt


def loss_terms(probs, gt) -> tuple[Tensor, Tensor]:
    """(weighted BCE, weighted IoU) for a probability map and a binary mask."""
    probs = as_tensor(probs)
    g = _check_gt(gt, probs.shape)
    w = boundary_weights(g)
    p = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    bce = -(log(p) * g + log(1.0 - p) * (1.0 - g))
    wbce = (bce * w).sum() / w.sum()
    inter = (probs * g * w).sum()
    union = ((probs + g - probs * g) * w).sum()
    wiou = 1.0 - (inter + 1.0) / (union + 1.0)
    return wbce, wiou


def weighted_bce_iou_loss(pred: PredictionMask | Tensor, gt) -> Tensor:
    """Scalar loss = weighted BCE + weighted IoU."""
    probs = pred.probs if isinstance(pred, PredictionMask) else pred
    wbce, wiou = loss_terms(probs, gt)
    return wbce + wiou
