"""Resize, crop, augmentation and normalization of RGB crops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
RESIZE_LONG_SIDE = 252
CROP_SIZE = 224


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    r0, r1, fr = _axis_weights(h, out_h)
    c0, c1, fc = _axis_weights(w, out_w)
    rows = img[..., r0, :] * (1 - fr)[:, None] + img[..., r1, :] * fr[:, None]
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def resize_longest(img, long_side: int = RESIZE_LONG_SIDE) -> np.ndarray:
    h, w = np.shape(img)[-2:]
    scale = long_side / max(h, w)
    oh = max(1, int(round(h * scale)))
    ow = max(1, int(round(w * scale)))
    return resize_bilinear(img, oh, ow)


def pad_to_min(img: np.ndarray, size: int) -> np.ndarray:
    """Edge-replicate so both spatial sides are at least ``size``."""
    h, w = img.shape[-2:]
    ph, pw = max(0, size - h), max(0, size - w)
    if not ph and not pw:
        return img
    widths = [(0, 0)] * (img.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    return np.pad(img, widths, mode="edge")


def crop(img: np.ndarray, size: int, mode: str = "eval", rng=None) -> np.ndarray:
    h, w = img.shape[-2:]
    if mode == "eval":
        top, left = (h - size) // 2, (w - size) // 2
    elif mode == "train":
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    return img[..., top : top + size, left : left + size]


def preprocess(image, mode: str = "eval", rng=None, long_side: int = RESIZE_LONG_SIDE,
               size: int = CROP_SIZE) -> np.ndarray:
    """Resize the longest side to ``long_side``, replicate up to ``size``, crop ``size``^2.

    Eval crops the centre; train draws the window uniformly from ``rng``.
    """
    resized = pad_to_min(resize_longest(image, long_side), size)
    return crop(resized, size, mode, rng)


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    jitter: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.jitter <= 0.2:
            raise ValueError("jitter must lie in [0, 0.2]")


def augment(image, rng, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Random flips, a 90 or 270 degree rotation, per-channel color jitter.

    Every draw is made regardless of the toggles so the random stream does not
    depend on the configuration. Rotation: 90 with p=0.25, 270 with p=0.25.
    """
    x = np.asarray(image, dtype=np.float64)
    u_h, u_v, u_r = rng.random(3)
    factors = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter, 3)
    if cfg.hflip and u_h < 0.5:
        x = x[..., :, ::-1]
    if cfg.vflip and u_v < 0.5:
        x = x[..., ::-1, :]
    if cfg.rotate and u_r < 0.5:
        x = np.rot90(x, k=1 if u_r < 0.25 else 3, axes=(-2, -1))
    if cfg.jitter > 0:
        x = np.clip(x * factors[:, None, None], 0.0, 1.0)
    return np.ascontiguousarray(x)


def normalize(stack) -> np.ndarray:
    """ImageNet statistics on RGB; ``(x - 0.5) / 0.5`` on augmentation planes."""
    x = np.array(stack, dtype=np.float64)
    mean = np.asarray(IMAGENET_MEAN)[:, None, None]
    std = np.asarray(IMAGENET_STD)[:, None, None]
    x[..., :3, :, :] = (x[..., :3, :, :] - mean) / std
    x[..., 3:, :, :] = (x[..., 3:, :, :] - 0.5) / 0.5
    return x
