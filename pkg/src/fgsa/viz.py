"""Grayscale PNG dumps of attention maps, predictions and pyramid energy."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .model import FGSANet, ForwardTrace
from .tensor import no_grad


def render(m: np.ndarray) -> np.ndarray:
    """8-bit rendering round(255 * m) of a [h, w] or [h, w, 1] map in [0, 1]."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 3:
        m = m[..., 0]
    return np.clip(np.round(255.0 * m), 0, 255).astype(np.uint8)


def energy_map(level: np.ndarray) -> np.ndarray:
    """Channel-mean squared activation, min-max scaled to [0, 1]."""
    e = (np.asarray(level) ** 2).mean(axis=-1)
    span = e.max() - e.min()
    return (e - e.min()) / span if span > 0 else np.zeros_like(e)


def collect_maps(model: FGSANet, image: np.ndarray) -> list[tuple[str, np.ndarray]]:
    trace = ForwardTrace([], [])
    with no_grad():
        pyr = model.features(image, trace)
        s = model.bb_cfg.image_size
        pred = model.head(pyr, (s, s)).probs.data
    maps = [(f"{name}_attn", t.data[..., 0]) for name, t in trace.attention_maps()]
    maps.append(("prediction", pred))
    maps += [(f"energy_level{i + 1}", energy_map(lv.data)) for i, lv in enumerate(pyr.levels)]
    return maps


def dump_maps(model: FGSANet, image: np.ndarray, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, m in collect_maps(model, image):
        p = out / f"{name}.png"
        Image.fromarray(render(m)).save(p)
        paths.append(p)
    return paths
