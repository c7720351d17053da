"""Bit-packed and 4-bit tensor types.

Dense tensors are plain ``numpy.ndarray`` values. ``BitTensor`` stores a
{-1, +1} tensor at one bit per element: bit 1 means +1, bit 0 means -1.
Bits are packed along the last axis into little-endian ``uint64`` words
(element ``j`` of a row lives in word ``j // 64`` at bit ``j % 64``).
Bits past the logical row length are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

WORD_BITS = 64


def _n_words(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


def tail_mask(n: int) -> np.ndarray:
    """Per-word masks selecting the ``n`` live bits of a packed row."""
    nw = _n_words(n)
    mask = np.full(nw, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = n % WORD_BITS
    if nw and rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


@dataclass(frozen=True)
class BitTensor:
    """Packed {-1, +1} tensor.

    ``words`` has shape ``shape[:-1] + (ceil(shape[-1] / 64),)``.
    """

    shape: tuple[int, ...]
    words: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if not shape:
            raise ShapeError("BitTensor needs at least one axis")
        expected = shape[:-1] + (_n_words(shape[-1]),)
        if self.words.shape != expected or self.words.dtype != np.uint64:
            raise ShapeError(
                f"words must be uint64 of shape {expected}, got "
                f"{self.words.dtype} {self.words.shape}"
            )

    @property
    def n(self) -> int:
        """Logical length of the packed (last) axis."""
        return self.shape[-1]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nbytes(self) -> int:
        return int(self.words.nbytes)

    def normalized(self) -> BitTensor:
        """Copy with every pad bit cleared."""
        return BitTensor(self.shape, self.words & tail_mask(self.n))

    def reshape_rows(self, rows_shape: tuple[int, ...], n: int) -> BitTensor:
        """Repack the same elements (row-major) into a new shape."""
        return pack(unpack(self).reshape(tuple(rows_shape) + (n,)))


def sign_quantize(x) -> BitTensor:
    """Binarize with ``x >= 0 -> +1``, else ``-1``.

    Negative zero compares ``>= 0`` and therefore maps to +1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if not np.all(np.isfinite(x)):
        raise ValueError("sign_quantize requires finite input")
    return _pack_bits(x >= 0)


def sign(x) -> np.ndarray:
    """Dense +-1 binarization, same convention as :func:`sign_quantize`."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0, -1.0)


def _pack_bits(bits: np.ndarray) -> BitTensor:
    shape = bits.shape
    n = shape[-1]
    nw = _n_words(n)
    padded = np.zeros(shape[:-1] + (nw * WORD_BITS,), dtype=np.uint8)
    padded[..., :n] = bits
    as_bytes = np.packbits(padded, axis=-1, bitorder="little")
    words = np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64)
    return BitTensor(shape, words.reshape(shape[:-1] + (nw,)))


def pack(x) -> BitTensor:
    """Pack a tensor whose entries are all exactly -1 or +1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if not np.all((x == 1.0) | (x == -1.0)):
        raise ValueError("pack requires every element to be -1 or +1; quantize first")
    return _pack_bits(x > 0)


def unpack(b: BitTensor) -> np.ndarray:
    """Inverse of :func:`pack`; returns a float64 array of +-1."""
    as_bytes = np.ascontiguousarray(b.words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., : b.n]
    return bits.astype(np.float64) * 2.0 - 1.0


def popcount_rows(a_words: np.ndarray, b_words: np.ndarray, n: int) -> np.ndarray:
    """Masked XNOR popcount between packed rows, broadcasting leading axes."""
    mask = tail_mask(n)
    same = ~(a_words ^ b_words) & mask
    return np.bitwise_count(same).sum(axis=-1, dtype=np.int64)


def xnor_popcount_dot(a: BitTensor, b: BitTensor) -> int:
    """Dot product of two packed +-1 vectors, ``2 * popcount(xnor) - n``."""
    if a.shape != b.shape or len(a.shape) != 1:
        raise ShapeError(f"xnor_popcount_dot needs equal 1-D shapes, got {a.shape} and {b.shape}")
    n = a.n
    return 2 * int(popcount_rows(a.words, b.words, n)) - n


def xnor_popcount_matmul(a: BitTensor, b: BitTensor, chunk_words: int = 1 << 22) -> np.ndarray:
    """All pairwise row dots: ``a`` is (P, n), ``b`` is (O, n); returns int64 (P, O)."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.n != b.n:
        raise ShapeError(f"incompatible packed operands {a.shape} and {b.shape}")
    n = a.n
    P, nw = a.words.shape
    O = b.words.shape[0]
    mask = tail_mask(n)
    out = np.empty((P, O), dtype=np.int64)
    step = max(1, chunk_words // max(1, O * nw))
    bw = b.words[None, :, :]
    for start in range(0, P, step):
        aw = a.words[start : start + step, None, :]
        same = ~(aw ^ bw) & mask
        out[start : start + step] = np.bitwise_count(same).sum(axis=-1, dtype=np.int64)
    return 2 * out - n


@dataclass(frozen=True)
class Int4Tensor:
    """Symmetric per-channel 4-bit quantized tensor, two codes per byte."""

    shape: tuple[int, ...]
    codes: np.ndarray  # uint8, low nibble holds the even-indexed element
    scale: np.ndarray  # one positive scale per slice along ``axis``
    axis: int = 0

    def int_codes(self) -> np.ndarray:
        n = int(np.prod(self.shape))
        lo = self.codes & 0x0F
        hi = self.codes >> 4
        nib = np.empty(self.codes.size * 2, dtype=np.int8)
        nib[0::2] = lo
        nib[1::2] = hi
        nib = nib[:n]
        nib = np.where(nib > 7, nib - 16, nib).astype(np.int8)
        return nib.reshape(self.shape)

    def dequantize(self) -> np.ndarray:
        bshape = [1] * len(self.shape)
        bshape[self.axis] = -1
        return self.int_codes().astype(np.float64) * self.scale.reshape(bshape)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def int4_quantize(x, axis: int = 0) -> Int4Tensor:
    """Quantize with ``scale_c = max|x_c| / 7`` per slice along ``axis``.

    All-zero slices get scale 1 and zero codes.
    """
    x = np.asarray(x, dtype=np.float64)
    axis = axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != axis)
    peak = np.max(np.abs(x), axis=red) if red else np.abs(x)
    scale = np.where(peak > 0, peak / 7.0, 1.0)
    bshape = [1] * x.ndim
    bshape[axis] = -1
    q = np.clip(_round_half_away(x / scale.reshape(bshape)), -8, 7).astype(np.int8)
    flat = (q.reshape(-1).astype(np.int16) & 0x0F).astype(np.uint8)
    if flat.size % 2:
        flat = np.append(flat, np.uint8(0))
    codes = (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)
    return Int4Tensor(tuple(x.shape), codes, scale, axis)


def int4_matmul(a, w: Int4Tensor) -> np.ndarray:
    """``a @ dequantize(w).T`` for a weight of shape (out, in) quantized along axis 0."""
    a = np.asarray(a, dtype=np.float64)
    if len(w.shape) != 2 or a.shape[-1] != w.shape[1]:
        raise ShapeError(f"int4_matmul: {a.shape} incompatible with weight {w.shape}")
    if w.axis == 0:
        # integer-code matmul, one rescale per output column
        return (a @ w.int_codes().T.astype(np.float64)) * w.scale
    return a @ w.dequantize().T
