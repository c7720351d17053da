"""Accuracy, ROC AUC and FLOP/BOP accounting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ModelSpec


def _labels(x) -> np.ndarray:
    a = np.asarray(x).astype(np.int64).ravel()
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("labels must be 0 or 1")
    return a


def confusion(preds, truth) -> dict[str, int]:
    p, t = _labels(preds), _labels(truth)
    if p.shape != t.shape:
        raise ValueError("preds and truth differ in length")
    return {
        "tp": int(np.sum((p == 1) & (t == 1))),
        "tn": int(np.sum((p == 0) & (t == 0))),
        "fp": int(np.sum((p == 1) & (t == 0))),
        "fn": int(np.sum((p == 0) & (t == 1))),
    }


def accuracy(preds, truth) -> float:
    p, t = _labels(preds), _labels(truth)
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if p.shape != t.shape:
        raise ValueError("preds and truth differ in length")
    return float(np.mean(p == t))


def auc(scores, truth) -> float:
    """Area under the ROC curve by a trapezoidal sweep over distinct thresholds.

    Tied scores move the curve diagonally, which credits each tied
    positive/negative pair with one half.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = _labels(truth)
    if s.shape != t.shape:
        raise ValueError("scores and truth differ in length")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(t)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class LayerOps:
    name: str
    kind: str  # "fp_conv", "binary_conv" or "fp_linear"
    flops: int
    bops: int
    params: int
    param_bytes: int


@dataclass
class OpCount:
    layers: list[LayerOps] = field(default_factory=list)

    @property
    def flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def bops(self) -> int:
        return sum(l.bops for l in self.layers)

    @property
    def effective_flops(self) -> float:
        return self.flops + self.bops / 64

    @property
    def param_bytes(self) -> int:
        return sum(l.param_bytes for l in self.layers)

    def totals(self) -> dict:
        return {"flops": self.flops, "bops": self.bops,
                "effective_flops": self.effective_flops, "param_bytes": self.param_bytes}

    def to_dict(self) -> dict:
        return {"layers": [asdict(l) for l in self.layers], "totals": self.totals()}


def count_ops(spec: ModelSpec, binary: bool = True) -> OpCount:
    """Per-layer operation counts for one forward pass.

    One multiply-accumulate is 2 ops. A binary conv reports its MACs as BOPs
    plus one FLOP per output element for the alpha multiply. Elementwise work
    (affine, shortcut, pooling) is not counted. ``binary=False`` prices the
    same topology with every conv in full precision.
    """
    out = OpCount()
    size = spec.image_size
    hw = size * size
    if spec.use_adapter:
        a = spec.adapter
        n = a.n_taps * a.out_channels
        out.layers.append(LayerOps("adapter", "fp_conv", 2 * a.n_taps * a.out_channels * hw,
                                   0, n, 4 * n))
    for i, (b, shape) in enumerate(zip(spec.blocks, spec.feature_maps()[1:])):
        c = b.conv
        _, oh, ow = shape
        macs = c.n_taps * c.out_channels * oh * ow
        n = c.n_taps * c.out_channels
        if binary:
            out.layers.append(LayerOps(f"blocks.{i}", "binary_conv", oh * ow * c.out_channels,
                                       2 * macs, n, -(-n // 64) * 8))
        else:
            out.layers.append(LayerOps(f"blocks.{i}", "fp_conv", 2 * macs, 0, n, 4 * n))
    f = spec.feature_dim
    out.layers.append(LayerOps("head", "fp_linear", 2 * f, 0, f + 1, 4 * (f + 1)))
    return out


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    auc: float | None
    flops: int
    bops: int
    effective_flops: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(probabilities, truth, spec: ModelSpec) -> EvalReport:
    """Threshold at 0.5 (label fake when p >= 0.5) and summarize."""
    p = np.asarray(probabilities, dtype=np.float64)
    t = _labels(truth)
    preds = (p >= 0.5).astype(np.int64)
    conf = confusion(preds, t)
    both = 0 < t.sum() < t.size
    ops = count_ops(spec)
    return EvalReport(**conf, accuracy=accuracy(preds, t), auc=auc(p, t) if both else None,
                      flops=ops.flops, bops=ops.bops, effective_flops=ops.effective_flops)
