"""PNM codec, dataset directory scanning and the synthetic real/fake generator.

Dataset layout::

    root/
      train/real/*.ppm  train/fake/*.ppm
      val/real/...      val/fake/...
      test/real/...     test/fake/...

Label 0 is real, 1 is fake.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .fft import fft2d
from .model import atomic_write

SPLITS = ("train", "val", "test")
CLASSES = ("real", "fake")
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")
MAX_PIXELS = 1 << 28

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes, rgb: bool = False) -> np.ndarray:
    """Decode binary P6 to (3, h, w) or P5 to (1, h, w), scaled to [0, 1].

    ``rgb=True`` broadcasts grayscale to three channels.
    """
    data = bytes(data)
    if data[:2] not in (b"P5", b"P6"):
        raise DataError("bad magic: expected binary PNM (P5 or P6)")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise DataError("truncated PNM header")
        tok = m.group(1)
        if not tok.isdigit() or len(tok) > 9:
            raise DataError(f"bad header field {tok[:16]!r}")
        fields.append(int(tok))
        pos = m.end()
    w, h, maxval = fields
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise DataError("missing whitespace after PNM header")
    pos += 1
    if w < 1 or h < 1 or w * h > MAX_PIXELS:
        raise DataError(f"dimension overflow or empty image: {w}x{h}")
    if maxval != 255:
        raise DataError(f"only maxval 255 is supported, got {maxval}")
    need = w * h * channels
    if len(data) - pos < need:
        raise DataError(f"payload has {len(data) - pos} bytes, header declares {need}")
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    img = px.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float64) / 255.0
    if rgb and channels == 1:
        img = np.repeat(img, 3, axis=0)
    return img


def encode_pnm(img) -> bytes:
    """Encode (3, h, w) as P6 or (h, w) / (1, h, w) as P5, 8 bits per sample."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"cannot encode array of shape {a.shape} as PNM")
    c, h, w = a.shape
    px = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + px.tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read(), rgb=True)


@dataclass
class Sample:
    image: np.ndarray
    label: int
    id: str


@dataclass
class DatasetManifest:
    split: str
    entries: list[tuple[str, int]] = field(default_factory=list)
    seed: int | None = None

    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.entries], dtype=np.int64)


def scan_directory(root) -> dict[str, DatasetManifest]:
    """Manifests for every split directory present under ``root``.

    Entries are ordered real before fake, lexicographically within a class.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    seed = None
    meta = root / "manifest.json"
    if meta.is_file():
        seed = json.loads(meta.read_text()).get("seed")
    out = {}
    for split in SPLITS:
        sdir = root / split
        if not sdir.is_dir():
            continue
        entries = []
        for label, cls in enumerate(CLASSES):
            cdir = sdir / cls
            if not cdir.is_dir():
                raise DataError(f"missing class directory {cdir}")
            files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                raise DataError(f"no images in {cdir}")
            entries += [(str(p), label) for p in files]
        out[split] = DatasetManifest(split, entries, seed)
    if not out:
        raise DataError(f"no split directories ({', '.join(SPLITS)}) under {root}")
    return out


def load_samples(manifest: DatasetManifest, root=None) -> list[Sample]:
    samples = []
    for path, label in manifest.entries:
        ident = os.path.relpath(path, root) if root is not None else path
        samples.append(Sample(read_image(path), label, ident))
    return samples


# -- synthetic generator ----------------------------------------------------

GRID_AMPLITUDE = 0.08
NOISE_SIGMA = 0.05
N_GRATINGS = 4


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)


def _box_blur(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2:]
    p = np.pad(a, [(0, 0), (1, 1), (1, 1)], mode="edge")
    return sum(p[:, i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0


def synth_image(size: int, fake: bool, rng: np.random.Generator) -> np.ndarray:
    """One (3, size, size) image in [0, 1].

    Real: per channel, 4 random low-frequency gratings (at most size/16 cycles
    per axis), min-max scaled, plus N(0, 0.05) noise. Fake adds a sinusoid of
    amplitude 0.08 at size/4 cycles along each axis and box-blurs a random
    half of the frame. Both end with a min-max map onto [0, 1].
    """
    fmax = max(1, size // 16)
    m = np.arange(size)[:, None] / size
    n = np.arange(size)[None, :] / size
    field = np.zeros((3, size, size))
    for c in range(3):
        for _ in range(N_GRATINGS):
            fy, fx = rng.integers(0, fmax + 1, 2)
            if fy == 0 and fx == 0:
                fx = 1
            amp = rng.uniform(0.5, 1.0)
            phase = rng.uniform(0, 2 * np.pi)
            field[c] += amp * np.cos(2 * np.pi * (fy * m + fx * n) + phase)
    img = _minmax(field) + rng.normal(0.0, NOISE_SIGMA, field.shape)
    # fake-only draws happen after the shared ones so both classes use the same stream layout
    k = size / 4
    ph = rng.uniform(0, 2 * np.pi, 2)
    half = int(rng.integers(0, 4))
    if fake:
        img = img + GRID_AMPLITUDE * (np.sin(2 * np.pi * k * m + ph[0]) + np.sin(2 * np.pi * k * n + ph[1]))
        blurred = _box_blur(img)
        s = size // 2
        region = [np.s_[:, :s, :], np.s_[:, s:, :], np.s_[:, :, :s], np.s_[:, :, s:]][half]
        img[region] = blurred[region]
    return _minmax(img)


def split_counts(n: int) -> dict[str, int]:
    n_val = int(0.15 * n)
    n_test = int(0.15 * n)
    return {"train": n - n_val - n_test, "val": n_val, "test": n_test}


def generate_synthetic(root, n_per_class: int, size: int = 64, seed: int = 0) -> dict[str, DatasetManifest]:
    """Write a synthetic dataset as P6 files plus ``manifest.json``; return the manifests.

    Files are named ``{class}_{index:05}.ppm``; indices run 0..n-1 per class and
    are split 70/15/15 in index order into train/val/test.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    root = Path(root)
    counts = split_counts(n_per_class)
    bounds = np.cumsum([0] + [counts[s] for s in SPLITS])
    manifests = {s: DatasetManifest(s, [], seed) for s in SPLITS if counts[s]}
    for label, cls in enumerate(CLASSES):
        for idx in range(n_per_class):
            split = SPLITS[int(np.searchsorted(bounds, idx, side="right")) - 1]
            rng = np.random.default_rng([seed, label, idx])
            img = synth_image(size, bool(label), rng)
            path = root / split / cls / f"{cls}_{idx:05}.ppm"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_pnm(img))
            manifests[split].entries.append((str(path), label))
    meta = {
        "seed": seed,
        "n_per_class": n_per_class,
        "size": size,
        "splits": {s: counts[s] for s in SPLITS},
        "params": {"grid_amplitude": GRID_AMPLITUDE, "grid_frequency": size / 4,
                   "noise_sigma": NOISE_SIGMA, "gratings": N_GRATINGS,
                   "max_grating_frequency": max(1, size // 16), "blur": "3x3 box on a random half"},
    }
    root.mkdir(parents=True, exist_ok=True)
    atomic_write(root / "manifest.json", (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return manifests


def high_band_energy(gray) -> np.ndarray:
    """Mean squared DFT magnitude over bins at or above a quarter of the sampling rate.

    A bin (u, v) is in the band when ``max(|fu|, |fv|) >= 0.25`` cycles/pixel.
    """
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape[-2:]
    fu = np.abs(np.fft.fftfreq(h))[:, None]
    fv = np.abs(np.fft.fftfreq(w))[None, :]
    band = np.maximum(fu, fv) >= 0.25
    power = np.abs(fft2d(g - g.mean(axis=(-2, -1), keepdims=True))) ** 2
    return (power * band).sum(axis=(-2, -1)) / (h * w)
