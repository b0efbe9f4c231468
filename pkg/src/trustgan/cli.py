"""Command-line entry point: ``trustgan {train,eval,infer,compare,export-attacks}``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import TrustGANError

log = logging.getLogger("trustgan")


def _parser():
    parser = argparse.ArgumentParser(prog="trustgan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, checkpoint=False, infile=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override; repeatable")
        if checkpoint:
            p.add_argument("--checkpoint",
                           help="target checkpoint (default: OUT/checkpoints/target_best.ckpt)")
        if infile:
            p.add_argument("--input", required=True,
                           help="samples as .npy, .json or comma-separated text")
        return p

    add("train", "train a target model (standard or trustgan mode)")
    add("eval", "write the metric report for a trained checkpoint", checkpoint=True)
    add("infer", "predict with abstention below the configured threshold",
        checkpoint=True, infile=True)
    add("compare", "train and evaluate both modes side by side")
    exp = add("export-attacks", "sample generated attacks from the stored generator snapshots")
    exp.add_argument("--count", type=int, help="number of samples (default: config export_count)")
    return parser


def _checkpoint(args, cfg):
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(cfg.out) / "checkpoints" / "target_best.ckpt"


def run(args):
    cfg = load_config(args.config, args.set, args.seed, args.out)
    if args.command == "train":
        _, result = pipeline.run_train(cfg)
        best = result.best
        print(f"best epoch {best.epoch}; artifacts in {cfg.out}")
    elif args.command == "eval":
        report = pipeline.run_eval(cfg, _checkpoint(args, cfg))
        for row in report.table_rows():
            print(json.dumps(row, sort_keys=True))
    elif args.command == "infer":
        results = pipeline.run_infer(cfg, _checkpoint(args, cfg), args.input)
        for decision, confidence in results:
            label = pipeline.ABSTAIN if decision is None else str(decision)
            print(f"{label},{confidence:.6f}")
    elif args.command == "compare":
        comparison = pipeline.run_compare(cfg)
        print(json.dumps(comparison["ratio_mean_conf_ood"], sort_keys=True))
    elif args.command == "export-attacks":
        samples = pipeline.run_export(cfg, count=args.count)
        print(f"exported {len(samples)} samples to {Path(cfg.out) / 'attacks'}")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (TrustGANError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
