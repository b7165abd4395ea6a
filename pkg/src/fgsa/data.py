"""Synthetic camouflage images and PNG image/mask IO.

A sample hides a smooth random shape in a textured background. Foreground
and background share base colour, texture amplitude and (by construction)
mean intensity; they differ only in which radial band of spatial
frequencies their texture occupies.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

SHAPES = ("ellipse", "blob", "polygon")
AREA_RANGE = (0.05, 0.40)
MEAN_GAP_TOL = 0.02


@dataclass
class Sample:
    image: np.ndarray  # [H, W, 3] in [0, 1]
    mask: np.ndarray  # [H, W] in {0, 1}
    id: str


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    n_train: int = 32
    n_test: int = 16
    shape: str = "mixed"  # one of SHAPES or "mixed"
    bg_band: tuple[float, float] = (0.0, 0.08)  # cycles / pixel
    fg_band: tuple[float, float] = (0.20, 0.40)
    texture_std: float = 0.12
    contrast_delta: float = 0.0
    seed: int = 7

    def validate(self) -> None:
        if self.size < 16:
            raise ValueError(f"image size {self.size} is too small (need >= 16)")
        if self.n_train < 1 and self.n_test < 1:
            raise ValueError("config asks for zero samples")
        if self.shape not in SHAPES + ("mixed",):
            raise ValueError(f"unknown shape kind {self.shape!r}")
        if not 0.0 <= self.contrast_delta <= 0.2:
            raise ValueError(f"contrast_delta {self.contrast_delta} outside [0, 0.2]")
        for lo, hi in (self.bg_band, self.fg_band):
            if not 0.0 <= lo < hi <= 0.5 * np.sqrt(2):
                raise ValueError(f"invalid frequency band ({lo}, {hi})")


def band_noise(rng: np.random.Generator, size: int, band: tuple[float, float]) -> np.ndarray:
    """White noise restricted to a radial frequency band, zero mean, unit std."""
    f = np.fft.fftfreq(size)
    radius = np.hypot(f[:, None], f[None, :])
    keep = (radius >= band[0]) & (radius < band[1])
    keep[0, 0] = False
    spectrum = np.fft.fft2(rng.standard_normal((size, size))) * keep
    tex = np.fft.ifft2(spectrum).real
    return (tex - tex.mean()) / (tex.std() + 1e-12)


def _polar_grid(size: int, cy: float, cx: float):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    return np.hypot(dy, dx), np.arctan2(dy, dx)


def random_shape(rng: np.random.Generator, size: int, kind: str) -> np.ndarray:
    area = rng.uniform(0.08, 0.30) * size * size
    r0 = np.sqrt(area / np.pi)
    margin = r0 * 1.2
    cy, cx = rng.uniform(margin, size - margin, size=2) if margin < size / 2 else (size / 2, size / 2)
    rad, theta = _polar_grid(size, cy, cx)
    if kind == "ellipse":
        ratio = rng.uniform(0.6, 1.0)
        rot = rng.uniform(0, np.pi)
        a, b = r0 / np.sqrt(ratio), r0 * np.sqrt(ratio)
        u = rad * np.cos(theta - rot)
        v = rad * np.sin(theta - rot)
        return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.float64)
    if kind == "blob":
        edge = np.ones_like(theta)
        for k in (2, 3, 4):
            edge += rng.uniform(0.0, 0.25 / k * 2) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
        return (rad <= r0 * edge).astype(np.float64)
    if kind == "polygon":
        n = int(rng.integers(5, 9))
        ang = np.sort(rng.uniform(-np.pi, np.pi, size=n))
        rr = r0 * rng.uniform(0.8, 1.25, size=n)
        px, py = rr * np.cos(ang), rr * np.sin(ang)
        seg = (np.searchsorted(ang, theta) - 1) % n
        nxt = (seg + 1) % n
        ex, ey = px[nxt] - px[seg], py[nxt] - py[seg]
        ux, uy = np.cos(theta), np.sin(theta)
        # distance along the ray to the polygon edge spanning this angle
        r_edge = (px[seg] * ey - py[seg] * ex) / (ux * ey - uy * ex)
        return (rad <= r_edge).astype(np.float64)
    raise ValueError(f"unknown shape kind {kind!r}")


def _make_sample(rng: np.random.Generator, cfg: SynthConfig, sid: str) -> Sample:
    s = cfg.size
    for _ in range(100):
        kind = cfg.shape if cfg.shape != "mixed" else SHAPES[int(rng.integers(len(SHAPES)))]
        mask = random_shape(rng, s, kind)
        frac = mask.mean()
        if not AREA_RANGE[0] <= frac <= AREA_RANGE[1]:
            continue
        base = rng.uniform(0.35, 0.65, size=3)
        tint = rng.uniform(0.8, 1.2, size=3)
        bg = base + cfg.texture_std * tint * band_noise(rng, s, cfg.bg_band)[..., None]
        fg = base + cfg.texture_std * tint * band_noise(rng, s, cfg.fg_band)[..., None]
        inside = mask.astype(bool)
        # pin the per-channel fg/bg mean gap to contrast_delta
        shift = (bg[~inside].mean(axis=0) + cfg.contrast_delta) - fg[inside].mean(axis=0)
        img = np.where(inside[..., None], fg + shift, bg)
        img = np.clip(img, 0.0, 1.0)
        gap = img[inside].mean(axis=0) - img[~inside].mean(axis=0)
        if np.all(np.abs(gap - cfg.contrast_delta) <= MEAN_GAP_TOL):
            return Sample(img, mask, sid)
    raise RuntimeError(f"could not draw a valid sample for {sid}")


def generate(cfg: SynthConfig, split: str = "train") -> list[Sample]:
    """Deterministic list of samples for ``split`` ("train" or "test")."""
    cfg.validate()
    n = {"train": cfg.n_train, "test": cfg.n_test}.get(split)
    if n is None:
        raise ValueError(f"unknown split {split!r}")
    if n < 1:
        raise ValueError(f"split {split!r} has no samples")
    rng = np.random.default_rng([cfg.seed, 0 if split == "train" else 1])
    return [_make_sample(rng, cfg, f"{split}_{i:04d}") for i in range(n)]


def fg_bg_gap(sample: Sample) -> np.ndarray:
    inside = sample.mask.astype(bool)
    return sample.image[inside].mean(axis=0) - sample.image[~inside].mean(axis=0)


# -- file IO ---------------------------------------------------------------

def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, arr: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr)).save(path)


def save_sample(sample: Sample, root) -> None:
    root = Path(root)
    save_png(root / "images" / f"{sample.id}.png", sample.image)
    save_png(root / "masks" / f"{sample.id}.png", sample.mask)


def png_stems(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"directory not found: {d}")
    return {p.stem: p for p in sorted(d.glob("*.png"))}


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return (arr >= 128).astype(np.float64)


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def load_pairs(image_dir, mask_dir) -> list[Sample]:
    """Matched image/mask PNGs, sorted by basename."""
    imgs, masks = png_stems(Path(image_dir)), png_stems(Path(mask_dir))
    orphans = sorted(set(imgs) ^ set(masks))
    if orphans:
        side = "mask" if orphans[0] in imgs else "image"
        raise ValueError(f"no {side} counterpart for {orphans[0]!r}"
                         + (f" (+{len(orphans) - 1} more)" if len(orphans) > 1 else ""))
    out = []
    for stem in sorted(imgs):
        try:
            out.append(Sample(read_image(imgs[stem]), read_mask(masks[stem]), stem))
        except OSError as exc:
            raise ValueError(f"unreadable image pair {stem!r}: {exc}") from exc
    return out


def load_split(root) -> list[Sample]:
    root = Path(root)
    return load_pairs(root / "images", root / "masks")
