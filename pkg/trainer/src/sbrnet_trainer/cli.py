"""Command line: train and predict on simulator-produced datasets."""

from __future__ import annotations

import argparse
import sys

from .predict import predict
from .stabilize import MODES
from .train import TrainConfig, spec_for_preset, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbrnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--stabilize", choices=list(MODES), default="anscombe")
    p.add_argument("--fusion", choices=["concat", "add"], default="concat")
    p.add_argument("--slices", type=int, default=None, help="output z-slices (default: preset)")
    p.add_argument("--no-online-noise", action="store_true",
                   help="free-space / background-removed variants are pre-noised offline")
    p.add_argument("--binarize-targets", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="full-frame inference to prediction stacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.set_defaults(func=cmd_predict)
    return parser


def cmd_train(args) -> int:
    overrides = {
        "epochs": args.epochs,
        "lr": args.lr,
        "stabilize_mode": args.stabilize,
        "online_noise": not args.no_online_noise,
        "binarize_targets": args.binarize_targets,
        "seed": args.seed,
    }
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.patch is not None:
        overrides["patch_px"] = args.patch
    cfg = TrainConfig.for_preset(args.preset, **overrides)
    spec = spec_for_preset(args.preset, fusion=args.fusion, volume_slices=args.slices)
    path = train(args.manifest, args.out, spec, cfg)
    print(f"event=checkpoint path={path}", flush=True)
    return 0


def cmd_predict(args) -> int:
    written = predict(args.manifest, args.checkpoint, args.out, split=args.split)
    print(f"event=predicted n={len(written)}", flush=True)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
