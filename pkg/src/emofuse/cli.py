"""Command-line surface: train, eval, synth, gradcheck, report."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from emofuse import autodiff as ad
from emofuse.data import SynthConfig, load_dataset, synth_generate
from emofuse.losses import apc_loss, cross_entropy, total_loss
from emofuse.metrics import read_metrics, write_normalized_confusion, write_report
from emofuse.model import Model
from emofuse.train import TrainConfig, evaluate, load_checkpoint, train

GRADCHECK_THRESHOLD = 1e-3


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.disable_ma:
        cfg.disable_ma = True
    if args.disable_joo:
        cfg.disable_joo = True
    if args.disable_lsma:
        cfg.disable_lsma = True
    dataset = load_dataset(args.manifest)
    result = train(cfg, dataset, out_dir=args.out, log_fn=print)
    if result.checkpoint_path:
        print(f"checkpoint written to {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    model, _, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.manifest)
    report = evaluate(model, dataset, split=args.split)
    print(f"wa={report.wa:.4f} ua={report.ua:.4f} wf1={report.wf1:.4f} "
          f"n={int(report.confusion.sum())}")
    if args.out:
        paths = write_report(report, args.out)
        print(f"metrics written to {paths['metrics']}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_json(args.config)
    manifest = synth_generate(cfg, args.out)
    print(f"manifest written to {manifest}")
    return 0


def build_gradcheck_case(seed: int):
    """Tiny end-to-end instance: d_model 8, 3 classes, 2 samples, small feature dims."""
    rng = np.random.default_rng(seed)
    model = Model(text_dim=5, audio_dim=6, d_model=8, n_heads=2, n_classes=3, seed=seed)
    samples = [
        (rng.normal(size=(2, 5)).astype(np.float32), rng.normal(size=(3, 6)).astype(np.float32), 0),
        (rng.normal(size=(3, 5)).astype(np.float32), rng.normal(size=(2, 6)).astype(np.float32), 2),
    ]

    def loss_fn():
        logit_rows, fused_rows, ys = [], [], []
        for text, audio, label in samples:
            result = model.forward(text, audio)
            logit_rows.append(result.logits)
            fused_rows.append(result.fused)
            ys.append(label)
        logits = ad.stack_rows(logit_rows)
        ce = cross_entropy(logits, ys)
        apc = apc_loss(ad.stack_rows(fused_rows), model.labels.emb, ad.softmax(logits, axis=1))
        return total_loss(ce, apc, 1.0, 0.05)

    return model, loss_fn


def group_of(name: str) -> str:
    head = name.split(".")[0]
    if head in ("cross", "enhance"):
        return ".".join(name.split(".")[:2])
    return head


def cmd_gradcheck(args) -> int:
    model, loss_fn = build_gradcheck_case(args.seed)
    detail = {}
    worst = ad.grad_check(loss_fn, model.parameters(), detail=detail)
    groups = {}
    for name, err in detail.items():
        g = group_of(name)
        groups[g] = max(groups.get(g, 0.0), err)
    width = max(len(g) for g in groups)
    print(f"{'parameter group':<{width}}  worst relative error")
    for g in sorted(groups):
        flag = "" if groups[g] < GRADCHECK_THRESHOLD else "  FAIL"
        print(f"{g:<{width}}  {groups[g]:.3e}{flag}")
    ok = worst < GRADCHECK_THRESHOLD
    print(f"overall worst {worst:.3e} ({'pass' if ok else 'fail'} at {GRADCHECK_THRESHOLD:.0e})")
    return 0 if ok else 1


def cmd_report(args) -> int:
    report = read_metrics(args.metrics)
    path = write_normalized_confusion(report, args.out)
    print(f"wa={report.wa:.4f} ua={report.ua:.4f} wf1={report.wf1:.4f}")
    print(f"normalized confusion written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emofuse",
                                     description="Label-guided audio/text emotion classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a manifest of precomputed features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="JSON file with TrainConfig fields")
    p.add_argument("--disable-ma", action="store_true",
                   help="carry label embeddings across epochs without moving-average smoothing")
    p.add_argument("--disable-joo", action="store_true",
                   help="train with cross-entropy only (drop the consistency term)")
    p.add_argument("--disable-lsma", action="store_true",
                   help="bypass label-query enhancement (mean-pool cross-attended sequences)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="directory for checkpoint and training log")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="JSON file with SynthConfig fields")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="regenerate the normalized confusion table from a metrics file")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
