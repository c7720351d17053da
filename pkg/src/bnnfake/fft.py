"""Discrete Fourier transforms for arbitrary lengths.

Power-of-two lengths use an iterative decimation-in-time radix-2 FFT,
vectorized over every leading axis. Other lengths go through Bluestein's
chirp-z identity, which turns the DFT into a circular convolution of
power-of-two length.
"""

from __future__ import annotations

import numpy as np

# sub-problems at or below this length are solved with a dense DFT matrix
_BASE = 8


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _radix2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    base = min(n, _BASE)
    k = np.arange(base)
    dft = np.exp(-2j * np.pi * np.outer(k, k) / base)
    # row r, column c of the reshape holds x[r * (n // base) + c]; each column
    # is the decimated subsequence x[c :: n // base]
    X = dft @ x.reshape(lead + (base, n // base))
    while X.shape[-2] < n:
        half = X.shape[-1] // 2
        even = X[..., :half]
        odd = X[..., half:]
        m = X.shape[-2]
        twiddle = np.exp(-1j * np.pi * np.arange(m) / m)[:, None]
        odd = twiddle * odd
        X = np.concatenate([even + odd, even - odd], axis=-2)
    return X.reshape(lead + (n,))


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1
    while m < 2 * n - 1:
        m *= 2
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase argument small and exact
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:][::-1])
    conv = _ifft_pow2(_radix2(a) * _radix2(b))
    return conv[..., :n] * chirp


def _ifft_pow2(X: np.ndarray) -> np.ndarray:
    return np.conj(_radix2(np.conj(X))) / X.shape[-1]


def fft(x, inverse: bool = False) -> np.ndarray:
    """1-D DFT along the last axis. The inverse divides by the length."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if inverse:
        return np.conj(fft(np.conj(x))) / n
    if n == 1:
        return x.copy()
    return _radix2(x) if _is_pow2(n) else _bluestein(x)


def fft2d(x, inverse: bool = False) -> np.ndarray:
    """2-D DFT over the last two axes.

    Forward: ``X[u, v] = sum x[m, n] exp(-2 pi i (u m / H + v n / W))``.
    """
    y = fft(x, inverse)
    return np.swapaxes(fft(np.swapaxes(y, -1, -2), inverse), -1, -2)


def fftshift2d(X: np.ndarray) -> np.ndarray:
    """Move the zero-frequency bin to the center of the last two axes."""
    h, w = X.shape[-2:]
    return np.roll(X, (h // 2, w // 2), axis=(-2, -1))
