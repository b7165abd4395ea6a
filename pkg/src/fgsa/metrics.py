"""Camouflaged-object evaluation measures: S-measure, mean E-measure,
weighted F-measure and MAE.

Inputs are a prediction map in [0, 1] and a binary ground truth of the
same shape. Degenerate ground truths (no foreground, or all foreground)
follow the conventions noted on each function.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

EPS = np.finfo(np.float64).eps
N_THRESHOLDS = 256
WFM_SIGMA = 5.0
WFM_WINDOW = 7


@dataclass
class MetricsReport:
    s_alpha: float
    e_phi: float
    f_w_beta: float
    mae: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt > 0.5


def mae(pred, gt) -> float:
    pred, gt = _prep(pred, gt)
    return float(np.abs(pred - gt).mean())


# -- S-measure -------------------------------------------------------------

def _s_object(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _object_score(pred, gt) -> float:
    u = gt.mean()
    fg = _s_object(pred[gt])
    bg = _s_object(1.0 - pred[~gt])
    return u * fg + (1 - u) * bg


def _centroid(gt) -> tuple[int, int]:
    # 1-based centroid, halves rounded up
    h, w = gt.shape
    if not gt.any():
        return int(np.floor(w / 2 + 0.5)), int(np.floor(h / 2 + 0.5))
    ys, xs = np.nonzero(gt)
    return int(np.floor(xs.mean() + 1.5)), int(np.floor(ys.mean() + 1.5))


def _ssim(pred, gt) -> float:
    n = pred.size
    if n < 2:
        return 1.0 if n == 1 and pred.flat[0] == gt.flat[0] else 0.0
    g = gt.astype(np.float64)
    x, y = pred.mean(), g.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1)
    sy = ((g - y) ** 2).sum() / (n - 1)
    sxy = ((pred - x) * (g - y)).sum() / (n - 1)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _region_score(pred, gt) -> float:
    h, w = gt.shape
    cx, cy = _centroid(gt)
    area = h * w
    quads = [(slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
             (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))]
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    weights = (w1, w2, w3, 1.0 - w1 - w2 - w3)
    return sum(wt * _ssim(pred[q], gt[q]) for wt, q in zip(weights, quads) if wt > 0)


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """alpha * object score + (1 - alpha) * region score, clamped to [0, 1].

    All-background ground truth scores 1 - mean(pred); all-foreground
    scores mean(pred).
    """
    pred, gt = _prep(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _object_score(pred, gt) + (1 - alpha) * _region_score(pred, gt)
    return float(min(max(score, 0.0), 1.0))


# -- E-measure -------------------------------------------------------------

def thresholds() -> np.ndarray:
    """Binarization thresholds k / 256, k = 0..255 (foreground = pred > t)."""
    return np.arange(N_THRESHOLDS) / N_THRESHOLDS


def _enhanced_alignment(fm: np.ndarray, gt: np.ndarray) -> float:
    g = gt.astype(np.float64)
    if not gt.any():
        enhanced = 1.0 - fm
    elif gt.all():
        enhanced = fm
    else:
        dg = g - g.mean()
        dp = fm - fm.mean()
        align = 2.0 * dg * dp / (dg * dg + dp * dp + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure_mean(pred, gt) -> float:
    """Enhanced-alignment score averaged over 256 binarization thresholds."""
    pred, gt = _prep(pred, gt)
    scores = [_enhanced_alignment((pred > t).astype(np.float64), gt) for t in thresholds()]
    return float(np.mean(scores))


# -- weighted F-measure ----------------------------------------------------

def gaussian_kernel_1d(size: int = WFM_WINDOW, sigma: float = WFM_SIGMA) -> np.ndarray:
    r = (size - 1) / 2
    x = np.arange(size) - r
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _filter_same_zero(x: np.ndarray, k1: np.ndarray) -> np.ndarray:
    """Separable 'same' correlation with zero padding."""
    r = len(k1) // 2
    xp = np.pad(x, r)
    tmp = sum(k1[i] * xp[i:i + x.shape[0], :] for i in range(len(k1)))
    return sum(k1[j] * tmp[:, j:j + x.shape[1]] for j in range(len(k1)))


def nearest_foreground(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean distance to, and flat index of, the nearest foreground
    pixel; ties resolve to the first foreground pixel in row-major order."""
    h, w = gt.shape
    fy, fx = np.nonzero(gt)
    fidx = fy * w + fx
    yy, xx = np.mgrid[0:h, 0:w]
    py, px = yy.ravel(), xx.ravel()
    dist = np.empty(h * w)
    near = np.empty(h * w, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, fy.size))
    for s in range(0, h * w, chunk):
        d2 = (py[s:s + chunk, None] - fy[None, :]) ** 2 + (px[s:s + chunk, None] - fx[None, :]) ** 2
        k = d2.argmin(axis=1)
        near[s:s + chunk] = fidx[k]
        dist[s:s + chunk] = np.sqrt(d2[np.arange(k.size), k])
    return dist.reshape(h, w), near.reshape(h, w)


def weighted_f_measure(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure with Gaussian error dependency and distance-based
    background importance.

    A ground truth with no foreground scores 1 - mean(pred).
    """
    pred, gt = _prep(pred, gt)
    if not gt.any():
        return float(1.0 - pred.mean())
    err = np.abs(pred - gt)
    dist, near = nearest_foreground(gt)
    # background errors inherit the error at their nearest foreground pixel
    et = np.where(gt, err, err.ravel()[near])
    ea = _filter_same_zero(et, gaussian_kernel_1d())
    min_e = np.where(gt & (ea < err), ea, err)
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * importance
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (tpw + fpw + EPS)
    q = (1 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return float(min(max(q, 0.0), 1.0))


# -- aggregation -----------------------------------------------------------

def evaluate_pair(pred, gt) -> dict:
    return {"s_alpha": s_measure(pred, gt), "e_phi": e_measure_mean(pred, gt),
            "f_w_beta": weighted_f_measure(pred, gt), "mae": mae(pred, gt)}


def aggregate(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> MetricsReport:
    rows = [evaluate_pair(p, g) for p, g in pairs]
    if not rows:
        raise ValueError("no samples to evaluate")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return MetricsReport(n_samples=len(rows), **mean)
