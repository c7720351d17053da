import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnnfake.binops import ConvSpec
from bnnfake.metrics import accuracy, auc, confusion, count_ops, evaluate
from bnnfake.model import BlockSpec, ModelSpec, default_spec


def pairwise_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


class TestAccuracy:
    def test_basic(self):
        t = np.array([1, 0, 1, 1, 0])
        assert accuracy(t, t) == 1.0
        assert accuracy(1 - t, t) == 0.0
        assert accuracy([1, 0, 0, 0], [1, 1, 0, 0]) == 0.75

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([], [])

    def test_confusion_consistent(self, rng):
        t = rng.integers(0, 2, 50)
        p = rng.integers(0, 2, 50)
        c = confusion(p, t)
        assert sum(c.values()) == 50
        assert accuracy(p, t) == (c["tp"] + c["tn"]) / 50


class TestAUC:
    def test_examples(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
        assert auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75

    def test_ties_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    @given(st.integers(2, 200), st.integers(0, 2**32 - 1), st.booleans())
    def test_matches_pairwise(self, n, seed, coarse):
        r = np.random.default_rng(seed)
        t = r.integers(0, 2, n)
        t[0], t[1] = 0, 1
        s = r.integers(0, 5, n) / 4 if coarse else r.random(n)
        assert auc(s, t) == pytest.approx(pairwise_auc(s, t), abs=1e-12)

    def test_monotone_invariance(self, rng):
        t = rng.integers(0, 2, 100)
        s = rng.standard_normal(100)
        assert auc(np.exp(3 * s) + 7, t) == pytest.approx(auc(s, t), abs=1e-12)


class TestCountOps:
    def test_adapter_formula(self):
        spec = ModelSpec(("fft", "lbp"), (), 224)
        ops = count_ops(spec)
        assert ops.layers[0].flops == 2 * 5 * 1 * 3 * 224 * 224 == 1_505_280

    def test_binary_layer_formula(self):
        spec = ModelSpec((), (BlockSpec(ConvSpec(3, 16, 3, 3, 1, 1)), BlockSpec(ConvSpec(16, 16, 3, 3, 1, 1), "identity")),
                         32, use_adapter=False)
        layer = count_ops(spec).layers[1]
        assert layer.bops == 2 * 16 * 9 * 16 * 32 * 32 == 4_718_592
        assert layer.flops == 16_384

    def test_empty_blocks(self):
        spec = ModelSpec(("fft",), (), 16)
        ops = count_ops(spec)
        assert [l.name for l in ops.layers] == ["adapter", "head"]
        assert ops.flops == 2 * 4 * 3 * 256 + 2 * 3

    def test_additive_and_linear_in_area(self):
        a = count_ops(default_spec(("fft", "lbp"), 32))
        b = count_ops(default_spec(("fft", "lbp"), 64))
        assert a.flops == sum(l.flops for l in a.layers)
        for la, lb in zip(a.layers[:-1], b.layers[:-1]):
            assert lb.flops == 4 * la.flops and lb.bops == 4 * la.bops
        assert a.effective_flops == a.flops + a.bops / 64

    def test_full_precision_variant(self):
        spec = default_spec(("fft", "lbp"), 64)
        fp = count_ops(spec, binary=False)
        assert fp.bops == 0
        assert all(l.kind != "binary_conv" for l in fp.layers)


def test_evaluate_report(rng):
    spec = default_spec(("fft", "lbp"), 32)
    p = np.array([0.9, 0.1, 0.6, 0.4, 0.5])
    t = np.array([1, 0, 0, 1, 1])
    rep = evaluate(p, t, spec)
    assert (rep.tp, rep.tn, rep.fp, rep.fn) == (2, 1, 1, 1)
    assert rep.accuracy == 0.6
    d = json.loads(rep.to_json())
    assert set(d) == {"tp", "tn", "fp", "fn", "accuracy", "auc", "flops", "bops", "effective_flops"}
