"""Desk-scale training: STE backprop through the binary network, AdamW, linear lr decay.

The training forward computes each binary convolution as a dense matmul of
+-1 operands. Those products are small integers, so the logits are
bit-identical to the packed inference path in ``model.forward``.

``quant="clip"`` swaps every sign for ``clip(x, -1, 1)``. That surrogate
network is differentiable almost everywhere, and its exact gradient is what
the STE backward computes; the finite-difference checks rely on this.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .binops import col2im, im2col, pad2d
from .errors import DataError, NumericError
from .features import parse_channels, stack_channels
from .metrics import accuracy, auc
from .model import (
    ModelSpec,
    ModelState,
    adapter_forward,
    block_output,
    default_spec,
    global_pool,
    head_forward,
    init_state,
    predict_proba,
    shortcut,
)
from .preprocess import (
    CROP_SIZE,
    RESIZE_LONG_SIDE,
    AugmentConfig,
    augment,
    crop,
    normalize,
    pad_to_min,
    resize_longest,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-4
    lr_final: float = 1e-5
    lr_decay_epochs: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    batch_size: int = 32  # 128 at full scale
    max_epochs: int = 5  # 20 for small datasets
    freeze_backbone: bool = False
    seed: int = 0
    channels: tuple[str, ...] = ("fft", "lbp")
    augment: AugmentConfig = AugmentConfig()
    crop_size: int = CROP_SIZE
    resize_long_side: int = RESIZE_LONG_SIDE
    latent_clip: float = 1.5

    def __post_init__(self):
        if not 0 < self.lr_final <= self.lr_init:
            raise ValueError("need 0 < lr_final <= lr_init")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        object.__setattr__(self, "channels", parse_channels(self.channels))

    @classmethod
    def for_image_size(cls, size: int, **kw) -> TrainConfig:
        """Crop ``size`` and keep the 252:224 resize-to-crop ratio."""
        long_side = int(round(size * RESIZE_LONG_SIDE / CROP_SIZE))
        return cls(crop_size=size, resize_long_side=long_side, **kw)

    @classmethod
    def desk(cls, size: int = 64, **kw) -> TrainConfig:
        """From-scratch training on small crops.

        Without a pretrained backbone the 1e-4 fine-tuning rate barely moves
        the binary latents in 20 epochs, so both schedule endpoints go up 10x.
        """
        kw = {"lr_init": 1e-3, "lr_final": 1e-4, "max_epochs": 20, **kw}
        return cls.for_image_size(size, **kw)


# -- losses and surrogate gradients ---------------------------------------

def bce_loss(logit, label):
    """Binary cross-entropy on a logit, ``max(z, 0) - z y + log(1 + exp(-|z|))``."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def ste_backward(upstream, latent) -> np.ndarray:
    """Clipped-identity gradient of sign: pass where ``|latent| <= 1``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    latent = np.asarray(latent, dtype=np.float64)
    if upstream.shape != latent.shape:
        raise ValueError(f"shape mismatch {upstream.shape} vs {latent.shape}")
    return np.where(np.abs(latent) <= 1.0, upstream, 0.0)


def _quant(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "sign":
        return np.where(x >= 0, 1.0, -1.0)
    if mode == "clip":
        return np.clip(x, -1.0, 1.0)
    raise ValueError(f"unknown quantizer {mode!r}")


def _shortcut_backward(dy: np.ndarray, x_shape, block) -> np.ndarray:
    if block.skip == "identity":
        return dy
    c_in = x_shape[1]
    o = dy.shape[1]
    d = np.zeros((dy.shape[0], c_in) + dy.shape[2:])
    for start in range(0, o, c_in):
        d[:, : min(c_in, o - start)] += dy[:, start : start + c_in]
    s = block.conv.stride
    if s == 1:
        return d
    h, w = x_shape[2:]
    oh, ow = d.shape[2:]
    ones = np.pad(np.ones((h, w)), [(0, oh * s - h), (0, ow * s - w)])
    counts = ones.reshape(oh, s, ow, s).sum(axis=(1, 3))
    up = np.repeat(np.repeat(d / counts, s, axis=2), s, axis=3)
    return up[:, :, :h, :w]


def forward_train(state: ModelState, x, quant: str = "sign"):
    """Batched forward (N, C, H, W) -> logits, keeping what backward needs."""
    spec = state.spec
    x = np.asarray(x, dtype=np.float64)
    h = adapter_forward(x, state)
    cache = {"x": x, "blocks": []}
    for i, block in enumerate(spec.blocks):
        c = block.conv
        latent = state.params[f"blocks.{i}.latent"]
        xp = pad2d(h, c.padding)
        cols = im2col(_quant(xp, quant), c)
        wq = _quant(latent, quant).reshape(c.out_channels, -1)
        n = h.shape[0]
        oh, ow = c.output_hw(*h.shape[2:])
        conv = (cols @ wq.T).reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        alpha = np.abs(latent.reshape(c.out_channels, -1)).mean(axis=1)
        gamma = state.params[f"blocks.{i}.gamma"]
        y = block_output(conv, alpha, gamma, state.params[f"blocks.{i}.beta"], shortcut(h, block))
        cache["blocks"].append({"h": h, "xp": xp, "cols": cols, "wq": wq, "conv": conv,
                                "alpha": alpha})
        h = y
    pooled = global_pool(h)
    feat = _quant(pooled, quant)
    cache.update(last_shape=h.shape, pooled=pooled, feat=feat)
    return head_forward(feat, state), cache


def backward(state: ModelState, cache, dlogits) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dlogits * logits)`` for every non-frozen parameter."""
    spec = state.spec
    p = state.params
    dlogits = np.asarray(dlogits, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    grads["head.weight"] = cache["feat"].T @ dlogits
    grads["head.bias"] = np.array([dlogits.sum()])
    dfeat = np.outer(dlogits, p["head.weight"])
    dpooled = ste_backward(dfeat, cache["pooled"])
    n, f, hh, ww = cache["last_shape"]
    dh = np.broadcast_to(dpooled[:, :, None, None] / (hh * ww), (n, f, hh, ww))
    need_backbone = not state.frozen["backbone"]
    need_input = spec.use_adapter and not state.frozen["adapter"]
    for i in reversed(range(len(spec.blocks))):
        if not (need_backbone or need_input):
            break
        block = spec.blocks[i]
        c = block.conv
        bc = cache["blocks"][i]
        gamma = p[f"blocks.{i}.gamma"]
        latent = p[f"blocks.{i}.latent"]
        conv, alpha = bc["conv"], bc["alpha"]
        scaled = conv * alpha[:, None, None]
        dscaled = dh * gamma[:, None, None]
        dconv = dscaled * alpha[:, None, None]
        dconv_mat = dconv.transpose(0, 2, 3, 1).reshape(-1, c.out_channels)
        if need_backbone:
            grads[f"blocks.{i}.gamma"] = np.einsum("nohw,nohw->o", dh, scaled)
            grads[f"blocks.{i}.beta"] = dh.sum(axis=(0, 2, 3))
            dalpha = np.einsum("nohw,nohw->o", dscaled, conv)
            dwq = (dconv_mat.T @ bc["cols"]).reshape(latent.shape)
            taps = c.n_taps
            grads[f"blocks.{i}.latent"] = (ste_backward(dwq, latent)
                                           + dalpha[:, None, None, None] * np.sign(latent) / taps)
        if i == 0 and not need_input:
            break
        dcols = dconv_mat @ bc["wq"]
        dxp = ste_backward(col2im(dcols, bc["xp"].shape, c), bc["xp"])
        pd = c.padding
        dprev = dxp[:, :, pd : dxp.shape[2] - pd, pd : dxp.shape[3] - pd]
        if block.has_skip:
            dprev = dprev + _shortcut_backward(dh, bc["h"].shape, block)
        dh = dprev
    if spec.use_adapter and not state.frozen["adapter"]:
        x = cache["x"]
        grads["adapter.weight"] = np.einsum("nohw,nchw->oc", dh, x)
        grads["adapter.bias"] = dh.sum(axis=(0, 2, 3))
    return {k: v for k, v in grads.items() if not state.is_frozen(k)}


def loss_and_grads(state: ModelState, x, labels, quant: str = "sign"):
    """Mean BCE over the batch and its gradients."""
    logits, cache = forward_train(state, x, quant)
    y = np.asarray(labels, dtype=np.float64)
    loss = float(np.mean(bce_loss(logits, y)))
    grads = backward(state, cache, (sigmoid(logits) - y) / len(y))
    return loss, grads, logits


# -- optimizer and schedule -----------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def decays(name: str) -> bool:
    """Weight decay applies to adapter and head weights only."""
    return name in ("adapter.weight", "head.weight")


def adamw_step(params: dict, grads: dict, opt: OptimizerState, lr: float,
               cfg: TrainConfig = TrainConfig(), frozen=()) -> dict:
    """One AdamW update in place on ``params``; names in ``frozen`` are skipped."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        if name in frozen:
            continue
        p = params[name]
        if decays(name):
            p -= lr * cfg.weight_decay * p
        m = opt.m.setdefault(name, np.zeros_like(p))
        v = opt.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params


def lr_schedule(progress: float, cfg: TrainConfig = TrainConfig()) -> float:
    """Linear from ``lr_init`` at epoch 0 to ``lr_final`` at ``lr_decay_epochs``, flat after."""
    if progress <= 0:
        return cfg.lr_init
    if progress >= cfg.lr_decay_epochs:
        return cfg.lr_final
    frac = progress / cfg.lr_decay_epochs
    return cfg.lr_init + (cfg.lr_final - cfg.lr_init) * frac


# -- data pipeline ----------------------------------------------------------

def eval_inputs(images, cfg: TrainConfig) -> np.ndarray:
    """Centre-cropped, feature-stacked, normalized batch for evaluation."""
    crops = np.stack([crop(pad_to_min(resize_longest(im, cfg.resize_long_side), cfg.crop_size),
                           cfg.crop_size) for im in images])
    return normalize(stack_channels(crops, cfg.channels))


def _train_batch(resized, idx, cfg: TrainConfig, rng) -> np.ndarray:
    crops = []
    for j in idx:
        c = crop(resized[j], cfg.crop_size, "train", rng)
        crops.append(augment(c, rng, cfg.augment))
    return normalize(stack_channels(np.stack(crops), cfg.channels))


def score(state: ModelState, inputs: np.ndarray, labels) -> tuple[float, float | None, np.ndarray]:
    probs = predict_proba(inputs, state)
    y = np.asarray(labels)
    preds = (probs >= 0.5).astype(np.int64)
    both = 0 < y.sum() < y.size
    return accuracy(preds, y), (auc(probs, y) if both else None), probs


@dataclass
class TrainResult:
    state: ModelState
    log: list[dict]
    best_epoch: int

    def log_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def _check_two_classes(labels, what: str):
    u = set(int(v) for v in labels)
    if u != {0, 1}:
        raise DataError(f"{what} needs both classes, found labels {sorted(u)}")


def train_loop(train_samples, val_samples, cfg: TrainConfig = TrainConfig(),
               spec: ModelSpec | None = None, state: ModelState | None = None) -> TrainResult:
    """Train and return the checkpoint with the best validation accuracy.

    Deterministic for a given ``cfg.seed``. Per-step records carry
    epoch/step/loss/lr; per-epoch records carry val_acc/val_auc.
    """
    if not train_samples:
        raise DataError("empty training set")
    train_labels = np.array([s.label for s in train_samples])
    _check_two_classes(train_labels, "training set")
    if state is None:
        spec = spec or default_spec(cfg.channels, cfg.crop_size)
        state = init_state(spec, cfg.seed)
    else:
        state = state.copy()
    if state.spec.channels != cfg.channels:
        raise ValueError("model channels differ from the training config")
    if cfg.freeze_backbone:
        state.frozen["backbone"] = True
    if not val_samples:
        val_samples = train_samples
    val_labels = np.array([s.label for s in val_samples])
    val_inputs = eval_inputs([s.image for s in val_samples], cfg)
    resized = [pad_to_min(resize_longest(s.image, cfg.resize_long_side), cfg.crop_size)
               for s in train_samples]
    rng = np.random.default_rng(cfg.seed + 1)
    opt = OptimizerState()
    n = len(train_samples)
    steps_per_epoch = -(-n // cfg.batch_size)
    records: list[dict] = []
    best = (-1.0, state.copy(), 0)
    step = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            x = _train_batch(resized, idx, cfg, rng)
            lr = lr_schedule(epoch + b / steps_per_epoch, cfg)
            loss, grads, _ = loss_and_grads(state, x, train_labels[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            adamw_step(state.params, grads, opt, lr, cfg)
            for name in grads:
                if name.endswith(".latent"):
                    np.clip(state.params[name], -cfg.latent_clip, cfg.latent_clip,
                            out=state.params[name])
            records.append({"epoch": epoch, "step": step, "loss": loss, "lr": lr})
            step += 1
        acc, val_auc, _ = score(state, val_inputs, val_labels)
        records.append({"epoch": epoch, "val_acc": acc, "val_auc": val_auc})
        log.info("epoch %d val_acc %.4f val_auc %s", epoch, acc, val_auc)
        if acc > best[0]:
            best = (acc, state.copy(), epoch)
    return TrainResult(best[1], records, best[2])


def config_with(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
