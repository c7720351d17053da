"""Auxiliary image channels: FFT magnitude, LBP and Sobel.

Every channel function accepts RGB in [0, 1] shaped ``(..., 3, H, W)`` and
returns ``(..., H, W)`` in [0, 1], computed on the luma plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fft import fft2d, fftshift2d

AUGMENTATIONS = ("fft", "lbp", "sobel")

# clockwise from top-left; bit i of the LBP code belongs to offset i
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_MAX = 4.0 * np.sqrt(2.0)


def to_grayscale(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    luma = 0.299 * rgb[..., 0, :, :] + 0.587 * rgb[..., 1, :, :] + 0.114 * rgb[..., 2, :, :]
    return np.clip(luma, 0.0, 1.0)


def _replicate_pad(g: np.ndarray) -> np.ndarray:
    widths = [(0, 0)] * (g.ndim - 2) + [(1, 1), (1, 1)]
    return np.pad(g, widths, mode="edge")


def _minmax(m: np.ndarray) -> np.ndarray:
    lo = m.min(axis=(-2, -1), keepdims=True)
    hi = m.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (m - lo) / safe, 0.0)


def fft_magnitude_channel(rgb) -> np.ndarray:
    """Centered, log-compressed magnitude spectrum scaled to [0, 1] per image."""
    spectrum = fftshift2d(fft2d(to_grayscale(rgb)))
    return _minmax(np.log1p(np.abs(spectrum)))


def lbp_channel(rgb) -> np.ndarray:
    """8-neighbour local binary pattern code divided by 255.

    A neighbour equal to the centre sets its bit. Borders are replicated.
    """
    g = to_grayscale(rgb)
    h, w = g.shape[-2:]
    p = _replicate_pad(g)
    code = np.zeros(g.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(LBP_OFFSETS):
        nb = p[..., 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        code |= (nb >= g).astype(np.int64) << bit
    return code / 255.0


def sobel_channel(rgb) -> np.ndarray:
    """Gradient magnitude from the Sobel pair, divided by ``4 * sqrt(2)``."""
    g = to_grayscale(rgb)
    h, w = g.shape[-2:]
    p = _replicate_pad(g)
    # paired differences, so flat regions give exactly zero
    dx = p[..., :, 2:] - p[..., :, :-2]
    dy = p[..., 2:, :] - p[..., :-2, :]
    gx = (dx[..., 0:h, :] + 2.0 * dx[..., 1 : h + 1, :]) + dx[..., 2 : h + 2, :]
    gy = (dy[..., :, 0:w] + 2.0 * dy[..., :, 1 : w + 1]) + dy[..., :, 2 : w + 2]
    return np.sqrt(gx * gx + gy * gy) / SOBEL_MAX


_CHANNEL_FNS = {"fft": fft_magnitude_channel, "lbp": lbp_channel, "sobel": sobel_channel}


def parse_channels(config) -> tuple[str, ...]:
    """Canonical ordering of a set of augmentation names (fft, lbp, sobel)."""
    if isinstance(config, str):
        config = [c for c in config.split(",") if c.strip()]
    names = {c.strip().lower() for c in config}
    unknown = names - set(AUGMENTATIONS)
    if unknown:
        raise ValueError(f"unknown augmentation channel(s): {sorted(unknown)}")
    return tuple(a for a in AUGMENTATIONS if a in names)


@dataclass(frozen=True)
class FeatureStack:
    """RGB planes followed by the enabled augmentation planes."""

    channels: np.ndarray
    active: tuple[str, ...]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[-3]


def stack_channels(rgb, config=("fft", "lbp")) -> np.ndarray:
    """Array form of :func:`build_stack`; works on batches ``(N, 3, H, W)`` too."""
    rgb = np.asarray(rgb, dtype=np.float64)
    active = parse_channels(config)
    planes = [rgb] + [_CHANNEL_FNS[name](rgb)[..., None, :, :] for name in active]
    return np.concatenate(planes, axis=-3)


def build_stack(rgb, config=("fft", "lbp")) -> FeatureStack:
    active = parse_channels(config)
    return FeatureStack(stack_channels(rgb, active), active)
