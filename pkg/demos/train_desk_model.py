"""Train a small binary detector on synthetic data and inspect it.

Run: python3 demos/train_desk_model.py [n_per_class] [epochs]
The defaults (150 per class, 6 epochs) take about a minute on one core.
"""

import sys
import tempfile

from bnnfake.data import generate_synthetic, load_samples
from bnnfake.metrics import count_ops, evaluate
from bnnfake.model import predict_proba
from bnnfake.train import TrainConfig, eval_inputs, train_loop

n = int(sys.argv[1]) if len(sys.argv) > 1 else 150
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 6

with tempfile.TemporaryDirectory() as root:
    manifests = generate_synthetic(root, n, size=64, seed=7)
    data = {k: load_samples(m) for k, m in manifests.items()}

for channels in (("fft", "lbp"), ()):
    cfg = TrainConfig.desk(64, channels=channels, max_epochs=epochs, seed=7)
    result = train_loop(data["train"], data["val"], cfg)
    probs = predict_proba(eval_inputs([s.image for s in data["test"]], cfg), result.state)
    rep = evaluate(probs, [s.label for s in data["test"]], result.state.spec)
    label = "+".join(channels) or "rgb only"
    print(f"{label:9s} test acc {rep.accuracy:.3f}  auc {rep.auc:.3f}  best epoch {result.best_epoch}")

ops = count_ops(result.state.spec)
print(f"binary ops {ops.bops:,}  float ops {ops.flops:,}  effective {ops.effective_flops:,.0f}")
