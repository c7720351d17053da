"""Reference and XNOR/POPCOUNT convolutions.

All convolutions are cross-correlations (no kernel flip), the usual
deep-learning convention. The binary path binarizes the zero-padded input,
so padded border cells act as +1 (``sign(0) = +1``).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import BitTensor, _pack_bits, pack, sign, unpack, xnor_popcount_matmul


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be >= 1")
        if self.padding < 0:
            raise ShapeError("ConvSpec.padding must be >= 0")

    @property
    def n_taps(self) -> int:
        """Weights per output channel, ``C * Kh * Kw``."""
        return self.in_channels * self.kernel_h * self.kernel_w

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self} produces empty output on a {h}x{w} input")
        return oh, ow

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


@dataclass(frozen=True)
class ScalingFactor:
    alpha: np.ndarray  # one entry per output channel


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _check_input(x: np.ndarray, spec: ConvSpec):
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")


def pad2d(x: np.ndarray, pad: int, value=0) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, widths, mode="constant", constant_values=value)


def im2col(xp: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Patches of an already padded (N,C,Hp,Wp) array as rows of (N*H'*W', C*Kh*Kw)."""
    n, c, hp, wp = xp.shape
    oh, ow = spec.output_hw(hp - 2 * spec.padding, wp - 2 * spec.padding)
    s = spec.stride
    win = sliding_window_view(xp, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    win = win[:, :, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * spec.kernel_h * spec.kernel_w)


def col2im(dcols: np.ndarray, padded_shape: tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the padded input."""
    n, c, hp, wp = padded_shape
    oh, ow = spec.output_hw(hp - 2 * spec.padding, wp - 2 * spec.padding)
    s = spec.stride
    d = dcols.reshape(n, oh, ow, c, spec.kernel_h, spec.kernel_w)
    dxp = np.zeros((n, hp, wp, c), dtype=dcols.dtype)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            dxp[:, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += d[..., i, j]
    return dxp.transpose(0, 3, 1, 2)


def _cols_to_map(y: np.ndarray, n: int, oh: int, ow: int) -> np.ndarray:
    return y.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)


def conv2d_ref(x, w, spec: ConvSpec) -> np.ndarray:
    """Full-precision zero-padded cross-correlation."""
    xb, squeeze = _as_batch(np.asarray(x, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    _check_input(xb, spec)
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {w.shape} != {spec.weight_shape}")
    n, _, h, wd = xb.shape
    oh, ow = spec.output_hw(h, wd)
    cols = im2col(pad2d(xb, spec.padding), spec)
    y = _cols_to_map(cols @ w.reshape(spec.out_channels, -1).T, n, oh, ow)
    return y[0] if squeeze else y


def compute_alpha(w) -> ScalingFactor:
    """Per-output-channel ``mean(|w_o|)``, the L2-optimal scale for ``sign(w_o)``."""
    w = np.asarray(w, dtype=np.float64)
    return ScalingFactor(np.abs(w.reshape(w.shape[0], -1)).mean(axis=1))


def _weight_rows(w_b: BitTensor, spec: ConvSpec) -> BitTensor:
    if w_b.shape == (spec.out_channels, spec.n_taps):
        return w_b
    if int(np.prod(w_b.shape)) != spec.out_channels * spec.n_taps:
        raise ShapeError(f"packed weight {w_b.shape} does not fit {spec.weight_shape}")
    # storage layout differs from the per-filter row layout the kernel needs
    return pack(unpack(w_b).reshape(spec.out_channels, spec.n_taps))


def binary_conv2d_counts(x, w_b: BitTensor, spec: ConvSpec) -> np.ndarray:
    """Integer XNOR/POPCOUNT cross-correlation of ``sign(x)`` with packed weights."""
    xb, squeeze = _as_batch(np.asarray(x, dtype=np.float64))
    _check_input(xb, spec)
    n, _, h, wd = xb.shape
    oh, ow = spec.output_hw(h, wd)
    bits = pad2d(xb, spec.padding) >= 0
    act = _pack_bits(im2col(bits, spec))
    counts = xnor_popcount_matmul(act, _weight_rows(w_b, spec))
    y = _cols_to_map(counts, n, oh, ow)
    return y[0] if squeeze else y


def scale_counts(counts: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Apply per-output-channel scaling to a (…, O, H, W) count map."""
    return counts.astype(np.float64) * np.asarray(alpha, dtype=np.float64)[:, None, None]


def binary_conv2d(x, w_b: BitTensor, alpha: ScalingFactor, spec: ConvSpec) -> np.ndarray:
    """``(sign(x) (*) w_b) * alpha`` with XNOR/POPCOUNT arithmetic."""
    alpha = np.asarray(alpha.alpha if isinstance(alpha, ScalingFactor) else alpha)
    if alpha.shape != (spec.out_channels,):
        raise ShapeError(f"alpha shape {alpha.shape} != ({spec.out_channels},)")
    return scale_counts(binary_conv2d_counts(x, w_b, spec), alpha)


@dataclass
class BenchRow:
    spec: dict
    binary_ns: int
    float_ns: int
    speedup: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def bench_conv(spec: ConvSpec, input_size: tuple[int, int], repetitions: int = 5,
               seed: int = 0) -> BenchRow:
    """Median wall-clock of the packed kernel against the float reference.

    Weight packing is done once outside the timed region; activation packing
    is inside it since it happens on every forward pass.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    rng = np.random.default_rng(seed)
    h, w = input_size
    x = rng.standard_normal((spec.in_channels, h, w))
    wr = rng.standard_normal(spec.weight_shape)
    w_b = pack(sign(wr).reshape(spec.out_channels, -1))
    alpha = compute_alpha(wr)
    xs = np.where(x >= 0, 1.0, -1.0)
    oracle = conv2d_ref(pad2d(xs, spec.padding, 1.0), sign(wr),
                        ConvSpec(**{**asdict(spec), "padding": 0}))
    oracle = scale_counts(oracle, alpha.alpha)
    if not np.array_equal(binary_conv2d(x, w_b, alpha, spec), oracle):
        raise AssertionError("binary convolution disagrees with the reference before timing")

    def median_ns(fn):
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            fn()
            times.append(time.perf_counter_ns() - t0)
        return int(np.median(times))

    b_ns = median_ns(lambda: binary_conv2d(x, w_b, alpha, spec))
    f_ns = median_ns(lambda: conv2d_ref(x, wr, spec))
    return BenchRow(asdict(spec) | {"input_h": h, "input_w": w}, b_ns, f_ns, f_ns / b_ns)
