"""Adapter, binary backbone and linear head, plus the checkpoint format.

Inference runs every backbone convolution through the XNOR/POPCOUNT kernel.
``forward_reference`` recomputes the same network with dense float
convolutions on explicitly binarized operands; the two agree exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .binops import ConvSpec, binary_conv2d_counts, compute_alpha, conv2d_ref, pad2d, scale_counts
from .errors import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    ShapeError,
    TruncatedModelError,
    VersionMismatchError,
)
from .features import AUGMENTATIONS, FeatureStack, parse_channels
from .tensor import BitTensor, pack, sign

SKIP_KINDS = ("none", "identity", "pool_tile")


@dataclass(frozen=True)
class BlockSpec:
    """One binary convolution with an optional full-precision shortcut.

    ``identity`` needs matching shapes. ``pool_tile`` average-pools by the
    conv stride and repeats channels cyclically up to ``out_channels``; it
    has no weights.
    """

    conv: ConvSpec
    skip: str = "pool_tile"

    def __post_init__(self):
        if self.skip not in SKIP_KINDS:
            raise ValueError(f"skip must be one of {SKIP_KINDS}")
        c = self.conv
        if self.skip == "identity" and (c.in_channels != c.out_channels or c.stride != 1):
            raise ShapeError("identity skip needs equal channels and stride 1")

    @property
    def has_skip(self) -> bool:
        return self.skip != "none"


@dataclass(frozen=True)
class ModelSpec:
    channels: tuple[str, ...]
    blocks: tuple[BlockSpec, ...]
    image_size: int = 224
    use_adapter: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", parse_channels(self.channels))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.use_adapter and self.channels:
            raise ShapeError("augmentation channels need an adapter")
        c, h, w = 3, self.image_size, self.image_size
        for i, b in enumerate(self.blocks):
            if b.conv.in_channels != c:
                raise ShapeError(f"block {i} expects {b.conv.in_channels} channels, gets {c}")
            oh, ow = b.conv.output_hw(h, w)
            if b.skip == "pool_tile" and (-(-h // b.conv.stride), -(-w // b.conv.stride)) != (oh, ow):
                raise ShapeError(f"block {i}: pooled shortcut does not match conv output")
            if b.skip == "identity" and (oh, ow) != (h, w):
                raise ShapeError(f"block {i}: identity shortcut needs size-preserving conv")
            c, h, w = b.conv.out_channels, oh, ow

    @property
    def in_channels(self) -> int:
        return 3 + len(self.channels)

    @property
    def adapter(self) -> ConvSpec | None:
        return ConvSpec(self.in_channels, 3, 1, 1) if self.use_adapter else None

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1].conv.out_channels if self.blocks else 3

    def feature_maps(self) -> list[tuple[int, int, int]]:
        """(C, H, W) after the adapter and after each block."""
        shapes = [(3, self.image_size, self.image_size)]
        for b in self.blocks:
            shapes.append((b.conv.out_channels, *b.conv.output_hw(*shapes[-1][1:])))
        return shapes

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        if self.use_adapter:
            shapes["adapter.weight"] = (3, self.in_channels)
            shapes["adapter.bias"] = (3,)
        for i, b in enumerate(self.blocks):
            o = b.conv.out_channels
            shapes[f"blocks.{i}.latent"] = b.conv.weight_shape
            shapes[f"blocks.{i}.gamma"] = (o,)
            shapes[f"blocks.{i}.beta"] = (o,)
        shapes["head.weight"] = (self.feature_dim,)
        shapes["head.bias"] = (1,)
        return shapes


def default_spec(channels=("fft", "lbp"), image_size: int = 224,
                 widths=(16, 32, 64, 64), strides=(1, 2, 2, 1)) -> ModelSpec:
    """The desk-scale backbone: four 3x3 binary blocks."""
    blocks = []
    c = 3
    for o, s in zip(widths, strides):
        skip = "identity" if (o == c and s == 1) else "pool_tile"
        blocks.append(BlockSpec(ConvSpec(c, o, 3, 3, s, 1), skip))
        c = o
    channels = parse_channels(channels)
    return ModelSpec(channels, tuple(blocks), image_size, use_adapter=bool(channels))


def param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    return "backbone" if head == "blocks" else head


@dataclass
class ModelState:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(
        default_factory=lambda: {"adapter": False, "backbone": False, "head": False}
    )

    def alpha(self, i: int) -> np.ndarray:
        """Scaling factors of block ``i``, always derived from its latent weights."""
        return compute_alpha(self.params[f"blocks.{i}.latent"]).alpha

    def packed_weights(self, i: int) -> BitTensor:
        w = self.params[f"blocks.{i}.latent"]
        return pack(sign(w).reshape(w.shape[0], -1))

    def stored_weights(self, i: int) -> BitTensor:
        """Deployment form: the whole layer as one bit string, padded once.

        Per-filter rows of e.g. 144 taps would each pad to 192 bits.
        binary_conv2d accepts either form.
        """
        return pack(sign(self.params[f"blocks.{i}.latent"]).reshape(-1))

    def is_frozen(self, name: str) -> bool:
        return self.frozen[param_group(name)]

    def copy(self) -> ModelState:
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()}, dict(self.frozen))


def adapter_init(in_channels: int) -> np.ndarray:
    """(3, in_channels) starting weights for the 1x1 adapter."""
    n_aux = in_channels - 3
    wa = np.zeros((3, in_channels))
    if n_aux == 0:
        wa[:, :3] = np.eye(3)
        return wa
    for j in range(n_aux):
        wa[3 - n_aux + j, 3 + j] = 1.0
    for k in range(3 - n_aux):
        wa[k, :3] = 1.0 / 3.0
    wa[0, :3] = 1.0 / 3.0
    return wa


def init_state(spec: ModelSpec, seed: int = 0) -> ModelState:
    """Seeded initialization.

    Backbone and head draws come first and do not depend on the input
    channels, so models that differ only in augmentations share a backbone.
    The adapter starts by routing each augmentation plane to its own output
    plane; the remaining outputs (and always output 0) carry RGB luma.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    if spec.use_adapter:
        wa = adapter_init(spec.in_channels)
        params["adapter.weight"] = wa
        params["adapter.bias"] = np.zeros(3)
    for i, b in enumerate(spec.blocks):
        bound = 2.0 / np.sqrt(b.conv.n_taps)  # mean|w| = 1/sqrt(taps)
        params[f"blocks.{i}.latent"] = rng.uniform(-bound, bound, b.conv.weight_shape)
        params[f"blocks.{i}.gamma"] = np.ones(b.conv.out_channels)
        params[f"blocks.{i}.beta"] = np.zeros(b.conv.out_channels)
    f = spec.feature_dim
    params["head.weight"] = rng.uniform(-1.0, 1.0, f) / np.sqrt(f)
    params["head.bias"] = np.zeros(1)
    ordered = {k: params[k] for k in spec.param_shapes()}
    return ModelState(spec, ordered)


# -- shared pieces of every forward path ------------------------------------

def _channels_of(stack) -> np.ndarray:
    return stack.channels if isinstance(stack, FeatureStack) else np.asarray(stack, dtype=np.float64)


def adapter_forward(stack, state: ModelState) -> np.ndarray:
    """1x1 full-precision convolution from the stacked channels to 3 planes."""
    x = _channels_of(stack)
    spec = state.spec
    if x.shape[-3] != spec.in_channels:
        raise ShapeError(f"stack has {x.shape[-3]} channels, model expects {spec.in_channels}")
    if not spec.use_adapter:
        return x
    w = state.params["adapter.weight"]
    y = conv2d_ref(x, w.reshape(3, spec.in_channels, 1, 1), spec.adapter)
    return y + state.params["adapter.bias"][:, None, None]


def pool_tile(x: np.ndarray, stride: int, out_channels: int) -> np.ndarray:
    """Average-pool by ``stride`` (ceil mode) and tile channels to ``out_channels``."""
    if stride > 1:
        h, w = x.shape[-2:]
        oh, ow = -(-h // stride), -(-w // stride)
        widths = [(0, 0)] * (x.ndim - 2) + [(0, oh * stride - h), (0, ow * stride - w)]
        xp = np.pad(x, widths)
        ones = np.pad(np.ones((h, w)), widths[-2:])
        sums = xp.reshape(x.shape[:-2] + (oh, stride, ow, stride)).sum(axis=(-3, -1))
        counts = ones.reshape(oh, stride, ow, stride).sum(axis=(-3, -1))
        x = sums / counts
    idx = np.arange(out_channels) % x.shape[-3]
    return np.take(x, idx, axis=-3)


def shortcut(x: np.ndarray, block: BlockSpec):
    if block.skip == "identity":
        return x
    if block.skip == "pool_tile":
        return pool_tile(x, block.conv.stride, block.conv.out_channels)
    return None


def block_output(counts, alpha, gamma, beta, skip) -> np.ndarray:
    """``gamma * (counts * alpha) + beta (+ skip)`` in a fixed evaluation order."""
    y = gamma[:, None, None] * scale_counts(counts, alpha) + beta[:, None, None]
    if skip is not None:
        y = y + skip
    return np.ascontiguousarray(y)


def global_pool(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).mean(axis=(-2, -1))


def head_forward(feat, state: ModelState) -> np.ndarray:
    feat = np.asarray(feat, dtype=np.float64)
    w = state.params["head.weight"]
    if feat.shape[-1] != w.shape[0]:
        raise ShapeError(f"feature length {feat.shape[-1]} != head input {w.shape[0]}")
    return feat @ w + state.params["head.bias"][0]


# -- bit-packed inference ---------------------------------------------------

def block_forward(x, i: int, state: ModelState) -> np.ndarray:
    block = state.spec.blocks[i]
    counts = binary_conv2d_counts(x, state.packed_weights(i), block.conv)
    return block_output(counts, state.alpha(i), state.params[f"blocks.{i}.gamma"],
                        state.params[f"blocks.{i}.beta"], shortcut(np.asarray(x), block))


def backbone_forward(x3, state: ModelState) -> np.ndarray:
    """Blocks, global average pool, then sign: features in {-1, +1}^f."""
    h = np.asarray(x3, dtype=np.float64)
    for i in range(len(state.spec.blocks)):
        h = block_forward(h, i, state)
    return sign(global_pool(h))


def forward(stack, state: ModelState) -> np.ndarray:
    """Logit(s) for a stack ``(C, H, W)`` or a batch ``(N, C, H, W)``."""
    return head_forward(backbone_forward(adapter_forward(stack, state), state), state)


def predict_proba(stack, state: ModelState, batch: int = 64) -> np.ndarray:
    x = _channels_of(stack)
    if x.ndim == 3:
        return 1.0 / (1.0 + np.exp(-forward(x, state)))
    out = [forward(x[i : i + batch], state) for i in range(0, len(x), batch)]
    z = np.concatenate(out) if out else np.zeros(0)
    return 1.0 / (1.0 + np.exp(-z))


def forward_reference(stack, state: ModelState) -> np.ndarray:
    """Same network with every binary conv done as a dense float conv of +-1 operands."""
    h = adapter_forward(stack, state)
    for i, block in enumerate(state.spec.blocks):
        c = block.conv
        a = sign(pad2d(h, c.padding))  # zero border binarizes to +1
        unpadded = ConvSpec(c.in_channels, c.out_channels, c.kernel_h, c.kernel_w, c.stride, 0)
        counts = conv2d_ref(a, sign(state.params[f"blocks.{i}.latent"]), unpadded)
        h = block_output(counts, state.alpha(i), state.params[f"blocks.{i}.gamma"],
                         state.params[f"blocks.{i}.beta"], shortcut(h, block))
    return head_forward(sign(global_pool(h)), state)


# -- checkpoint format ------------------------------------------------------
# "BNFK" | u32 version | u32 len + spec words | param sections | u32 crc32
# A param section is u32 name_len, name, u32 ndim, u32 dims..., f64 data.

MAGIC = b"BNFK"
VERSION = 1
_GROUPS = ("adapter", "backbone", "head")


def _spec_words(state: ModelState) -> list[int]:
    spec = state.spec
    words = [spec.in_channels, int(spec.use_adapter)]
    words += [int(a in spec.channels) for a in AUGMENTATIONS]
    words += [spec.image_size, len(spec.blocks)]
    for b in spec.blocks:
        c = b.conv
        words += [c.in_channels, c.out_channels, c.kernel_h, c.kernel_w, c.stride, c.padding,
                  SKIP_KINDS.index(b.skip)]
    words += [int(state.frozen[g]) for g in _GROUPS]
    return words


def _spec_from_words(words: list[int]) -> tuple[ModelSpec, dict[str, bool]]:
    it = iter(words)
    try:
        in_ch, use_adapter = next(it), bool(next(it))
        channels = tuple([a for a in AUGMENTATIONS if next(it)])
        image_size, n_blocks = next(it), next(it)
        blocks = []
        for _ in range(n_blocks):
            # list, not a generator: StopIteration inside a genexpr becomes RuntimeError
            ci, co, kh, kw, s, p, sk = [next(it) for _ in range(7)]
            blocks.append(BlockSpec(ConvSpec(ci, co, kh, kw, s, p), SKIP_KINDS[sk]))
        frozen = {g: bool(next(it)) for g in _GROUPS}
    except (StopIteration, IndexError, ValueError) as exc:
        raise ModelFormatError(f"malformed spec section: {exc}") from None
    if next(it, None) is not None:
        raise ModelFormatError("trailing words in spec section")
    try:
        spec = ModelSpec(channels, tuple(blocks), image_size, use_adapter)
    except ValueError as exc:
        raise ModelFormatError(f"invalid model spec: {exc}") from None
    if spec.in_channels != in_ch:
        raise ModelFormatError("spec channel count is inconsistent")
    return spec, frozen


def encode_model(state: ModelState) -> tuple[bytes, list[tuple[str, int, int]]]:
    """Serialize; also returns ``(section, start, end)`` byte ranges."""
    sections: list[tuple[str, bytes]] = [("version", struct.pack("<I", VERSION))]
    words = _spec_words(state)
    sections.append(("spec", struct.pack(f"<I{len(words)}I", 4 * len(words), *words)))
    for name, arr in state.params.items():
        nb = name.encode()
        head = struct.pack(f"<I{len(nb)}sI{arr.ndim}I", len(nb), nb, arr.ndim, *arr.shape)
        sections.append((name, head + np.ascontiguousarray(arr, dtype="<f8").tobytes()))
    body = b"".join(s for _, s in sections)
    sections.append(("crc", struct.pack("<I", zlib.crc32(body))))
    out = bytearray(MAGIC)
    ranges = [("magic", 0, 4)]
    for name, blob in sections:
        ranges.append((name, len(out), len(out) + len(blob)))
        out += blob
    return bytes(out), ranges


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        avail = len(self.data) - self.pos
        if n > avail:
            raise TruncatedModelError(section, n, avail)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, section: str) -> int:
        return struct.unpack("<I", self.take(4, section))[0]


def decode_model(data: bytes) -> ModelState:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not a bnnfake model file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"model version {version}, expected {VERSION}")
    n = r.u32("spec")
    if n % 4:
        raise ModelFormatError("spec section length is not a multiple of 4")
    words = list(struct.unpack(f"<{n // 4}I", r.take(n, "spec")))
    spec, frozen = _spec_from_words(words)
    params = {}
    for name, shape in spec.param_shapes().items():
        nlen = r.u32(name)
        got = r.take(nlen, name).decode(errors="replace")
        if got != name:
            raise ModelFormatError(f"expected section {name!r}, found {got!r}")
        ndim = r.u32(name)
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, name))
        if tuple(dims) != shape:
            raise ModelFormatError(f"{name}: shape {dims} does not match spec {shape}")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * count, name), dtype="<f8").astype(np.float64).reshape(shape)
    body_end = r.pos
    crc = r.u32("crc")
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} unexpected bytes after checksum")
    if zlib.crc32(data[4:body_end]) != crc:
        raise ChecksumError("checksum mismatch")
    return ModelState(spec, params, frozen)


def atomic_write(path, data: bytes):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(state: ModelState, path) -> list[tuple[str, int, int]]:
    data, ranges = encode_model(state)
    atomic_write(path, data)
    return ranges


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def probe_input(spec: ModelSpec, seed: int = 1234, n: int = 2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, spec.in_channels, spec.image_size, spec.image_size))


def write_probe(state: ModelState, path, seed: int = 1234):
    """Golden logits for a seeded probe input, stored beside a checkpoint."""
    logits = forward(probe_input(state.spec, seed), state)
    payload = {"seed": seed, "logits_hex": [float(z).hex() for z in logits]}
    atomic_write(path, (json.dumps(payload, sort_keys=True) + "\n").encode())


def check_probe(state: ModelState, path) -> bool:
    with open(path) as fh:
        payload = json.load(fh)
    logits = forward(probe_input(state.spec, payload["seed"]), state)
    return [float(z).hex() for z in logits] == payload["logits_hex"]
