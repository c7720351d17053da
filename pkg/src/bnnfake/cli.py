"""Command-line entry point: ``python -m bnnfake <subcommand> ...``.

Every subcommand writes JSON (or JSONL for the training log) to ``--out`` or
stdout. Files are written to a temp name and renamed, so an error never
leaves a partial output behind.

Exit codes: 0 ok, 2 usage, 3 data, 4 model format, 5 numeric.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .binops import bench_conv
from .data import encode_pnm, generate_synthetic, load_samples, read_image, scan_directory
from .errors import DataError, ModelFormatError, NumericError, ShapeError
from .features import AUGMENTATIONS, fft_magnitude_channel, lbp_channel, parse_channels, sobel_channel
from .metrics import count_ops, evaluate
from .model import atomic_write, default_spec, load_model, predict_proba, save_model
from .train import TrainConfig, eval_inputs, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL, EXIT_NUMERIC = 0, 2, 3, 4, 5
DESK_SIZE = 64

_FEATURE_FNS = {"fft": fft_magnitude_channel, "lbp": lbp_channel, "sobel": sobel_channel}


class UsageError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def emit(text: str, out=None):
    if out is None or out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        atomic_write(out, text.encode())


def _channels(value: str) -> tuple[str, ...]:
    if value.strip().lower() in ("", "none", "rgb"):
        return ()
    try:
        return parse_channels(value)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _positive(name: str, v):
    if v is not None and v < 1:
        raise UsageError(f"{name} must be >= 1, got {v}")


def _desk_config(args, channels) -> TrainConfig:
    kw = {"seed": args.seed, "channels": channels, "freeze_backbone": getattr(args, "freeze_backbone", False)}
    if args.epochs is not None:
        kw["max_epochs"] = args.epochs
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    return TrainConfig.desk(args.size or DESK_SIZE, **kw)


def _split(manifests, name: str):
    if name not in manifests:
        raise DataError(f"dataset has no {name!r} split (found: {', '.join(manifests)})")
    return manifests[name]


def _load_split(root, name: str):
    return load_samples(_split(scan_directory(root), name))


def _labels_probs(state, samples):
    cfg = TrainConfig.for_image_size(state.spec.image_size, channels=state.spec.channels)
    probs = predict_proba(eval_inputs([s.image for s in samples], cfg), state)
    return probs, np.array([s.label for s in samples])


# -- subcommands -----------------------------------------------------------

def cmd_synth(args):
    _positive("--n-per-class", args.n_per_class)
    size = args.size or DESK_SIZE
    if size < 32:
        raise UsageError("--size must be >= 32 for synthetic data")
    manifests = generate_synthetic(args.out, args.n_per_class, size, args.seed)
    summary = {"root": str(args.out), "seed": args.seed, "size": size,
               "splits": {k: len(m.entries) for k, m in manifests.items()}}
    sys.stdout.write(_dumps(summary))


def cmd_train(args):
    _positive("--epochs", args.epochs)
    _positive("--batch-size", args.batch_size)
    cfg = _desk_config(args, _channels(args.channels))
    manifests = scan_directory(args.data)
    train = load_samples(_split(manifests, "train"))
    val = load_samples(manifests["val"]) if "val" in manifests else []
    result = train_loop(train, val, cfg)
    log_path = args.log or f"{args.model}.log.jsonl"
    atomic_write(log_path, result.log_jsonl().encode())
    save_model(result.state, args.model)
    best = [r for r in result.log if "val_acc" in r][result.best_epoch]
    emit(_dumps({"model": str(args.model), "log": str(log_path), "best_epoch": result.best_epoch,
                 "val_acc": best["val_acc"], "val_auc": best["val_auc"]}), args.out)


def cmd_eval(args):
    state = load_model(args.model)
    samples = _load_split(args.data, args.split)
    probs, labels = _labels_probs(state, samples)
    emit(evaluate(probs, labels, state.spec).to_json() + "\n", args.out)


def cmd_predict(args):
    state = load_model(args.model)
    cfg = TrainConfig.for_image_size(state.spec.image_size, channels=state.spec.channels)
    p = float(predict_proba(eval_inputs([read_image(args.image)], cfg), state)[0])
    emit(json.dumps({"probability_fake": p, "label": "fake" if p >= 0.5 else "real"}) + "\n", args.out)


def cmd_features(args):
    img = read_image(args.image)
    names = _channels(args.channels) if args.channels else AUGMENTATIONS
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    written = []
    for name in names:
        path = out_dir / f"{stem}_{name}.pgm"
        atomic_write(path, encode_pnm(_FEATURE_FNS[name](img)))
        written.append(str(path))
    sys.stdout.write(_dumps({"written": written}))


def cmd_flops(args):
    if args.model:
        spec = load_model(args.model).spec
    else:
        spec = default_spec(_channels(args.channels), args.size or DESK_SIZE)
    ops = count_ops(spec)
    fp = count_ops(spec, binary=False)
    report = ops.to_dict()
    report["full_precision_totals"] = fp.totals()
    report["bop_fraction"] = ops.bops / (ops.bops + ops.flops)
    report["effective_flops_ratio"] = ops.effective_flops / fp.effective_flops
    emit(_dumps(report), args.out)


def cmd_bench(args):
    _positive("--repetitions", args.repetitions)
    size = args.size or DESK_SIZE
    spec = default_spec((), size)
    rows = []
    for block, (c, h, w) in zip(spec.blocks, spec.feature_maps()):
        rows.append(json.loads(bench_conv(block.conv, (h, w), max(3, args.repetitions), args.seed).to_json()))
    emit(_dumps({"rows": rows}), args.out)


def ablation_channel_sets() -> list[tuple[str, ...]]:
    """RGB-only baseline followed by every non-empty subset of the augmentations."""
    sets = [()]
    for k in range(1, len(AUGMENTATIONS) + 1):
        sets += list(itertools.combinations(AUGMENTATIONS, k))
    return sets


def cmd_ablate(args):
    _positive("--epochs", args.epochs)
    _positive("--batch-size", args.batch_size)
    manifests = scan_directory(args.data)
    train = load_samples(_split(manifests, "train"))
    val = load_samples(manifests["val"]) if "val" in manifests else []
    test = load_samples(_split(manifests, args.split))
    rows = []
    for channels in ablation_channel_sets():
        cfg = _desk_config(args, channels)
        result = train_loop(train, val, cfg)
        probs, labels = _labels_probs(result.state, test)
        report = evaluate(probs, labels, result.state.spec)
        rows.append({"channels": list(channels) or ["rgb"],
                     **{k: getattr(report, k) for k in ("accuracy", "auc", "tp", "tn", "fp", "fn")}})
        logging.getLogger(__name__).info("ablate %s acc %.4f", channels, report.accuracy)
    emit(_dumps({"split": args.split, "seed": args.seed, "rows": rows}), args.out)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnnfake", description="Binary-network deepfake detector.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    def training_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--size", type=int, help=f"crop size (default {DESK_SIZE})")

    sp = add("synth", cmd_synth, "write a synthetic real/fake dataset under --out")
    sp.add_argument("--n-per-class", type=int, default=500)
    sp.add_argument("--size", type=int)

    sp = add("train", cmd_train, "train a model, write checkpoint and JSONL log")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True, help="checkpoint path to write")
    sp.add_argument("--log", help="JSONL log path (default <model>.log.jsonl)")
    sp.add_argument("--channels", default="fft,lbp", help="e.g. fft,lbp,sobel or rgb")
    sp.add_argument("--freeze-backbone", action="store_true")
    training_flags(sp)

    sp = add("eval", cmd_eval, "evaluate a checkpoint on one split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", default="test")

    sp = add("predict", cmd_predict, "score one image")
    sp.add_argument("image")
    sp.add_argument("--model", required=True)

    sp = add("features", cmd_features, "write augmentation planes of an image as PGM")
    sp.add_argument("image")
    sp.add_argument("--channels", help="subset to write (default all)")

    sp = add("flops", cmd_flops, "per-layer FLOP/BOP table")
    sp.add_argument("--model")
    sp.add_argument("--channels", default="fft,lbp")
    sp.add_argument("--size", type=int)

    sp = add("bench", cmd_bench, "time packed vs float convolutions of the desk backbone")
    sp.add_argument("--size", type=int)
    sp.add_argument("--repetitions", type=int, default=5)

    sp = add("ablate", cmd_ablate, "train and test every augmentation subset plus baseline")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    training_flags(sp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("features", "synth") and not args.out:
        parser.error(f"{args.command} requires --out DIR")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except UsageError as e:
        print(f"bnnfake: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as e:
        print(f"bnnfake: model format error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except NumericError as e:
        print(f"bnnfake: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as e:
        print(f"bnnfake: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"bnnfake: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
