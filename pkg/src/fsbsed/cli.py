"""Command line: ``fsbsed {pretrain,detect,evaluate,synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .augment import identity_policy
from .config import load_config, save_config
from .data import read_manifest
from .errors import CheckpointError, EmptyInputError, ManifestError, NumericError, ProtocolError, ShapeError
from .evaluation import aggregate_runs, format_table, write_report_csv
from .synth import make_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = load_config(args.config, args.set or ())
    top = {}
    if getattr(args, "manifest", None):
        top["manifest"] = args.manifest
    if getattr(args, "workers", None):
        top["workers"] = args.workers
    return replace(cfg, **top) if top else cfg


def cmd_pretrain(args):
    cfg = _config(args)
    train = cfg.train
    if args.pretrain_loss:
        train = replace(train, loss=args.pretrain_loss)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    out = Path(args.out or cfg.output_dir)
    rows = read_manifest(cfg.manifest)
    for seed in seeds:
        run_cfg = replace(cfg, train=replace(train, seed=seed), seeds=(seed,))
        target = out / f"seed{seed}" if len(seeds) > 1 else out
        _, history, ckpt = pipeline.run_pretrain(run_cfg, target, rows)
        last = history[-1] if history else {}
        print(f"seed {seed}: wrote {ckpt} (final total loss {last.get('total', float('nan')):.4f})")
    return EXIT_OK


def cmd_detect(args):
    cfg = _config(args)
    if args.finetune_loss:
        cfg = replace(cfg, finetune_loss=args.finetune_loss)
    elif args.finetune is True and not cfg.finetune_enabled:
        cfg = replace(cfg, finetune_loss="proto_mod")
    elif args.finetune is False:
        cfg = replace(cfg, finetune_loss="none")
    if args.views is not None:
        cfg = replace(cfg, detect=replace(cfg.detect, views=args.views))
    if args.light_identity:
        cfg = replace(cfg, light_policy=identity_policy())
    if args.seed is not None:
        cfg = replace(cfg, detect=replace(cfg.detect, seed=args.seed), adapt=replace(cfg.adapt, seed=args.seed),
                      episode=replace(cfg.episode, seed=args.seed))
    rows = read_manifest(cfg.manifest)
    if args.files:
        wanted = set(args.files)
        rows = [r for r in rows if r.audio.name in wanted or r.audio.stem in wanted]
    out = Path(args.out or Path(cfg.output_dir) / "predictions")
    preds = pipeline.run_detect(cfg, args.checkpoint, out, rows)
    print(f"wrote predictions for {len(preds)} file(s) to {out}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _config(args)
    iou_min = args.iou if args.iou is not None else cfg.iou_min
    reports = pipeline.evaluate_predictions(args.predictions, read_manifest(cfg.manifest), iou_min)
    out = Path(args.out or args.predictions)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", reports)
    table = format_table(aggregate_runs(reports))
    (out / "report.txt").write_text(table + "\n")
    save_config(replace(cfg, iou_min=iou_min), out / pipeline.RESOLVED_CONFIG)
    print(table)
    return EXIT_OK


def cmd_synth(args):
    manifest = make_corpus(args.out, seed=args.seed)
    print(f"wrote synthetic corpus, manifest at {manifest}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("--manifest", help="dataset manifest CSV (overrides [run] manifest)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fsbsed", description="Few-shot bioacoustic sound event detection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("pretrain", parents=[common], help="pre-train the feature extractor")
    sp.add_argument("--pretrain-loss", choices=("ce", "simclr", "scl", "scl_tcr"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_pretrain)

    sd = sub.add_parser("detect", parents=[common], help="detect events in validation files")
    sd.add_argument("--checkpoint", required=True)
    ft = sd.add_mutually_exclusive_group()
    ft.add_argument("--finetune", dest="finetune", action="store_true", default=None)
    ft.add_argument("--no-finetune", dest="finetune", action="store_false")
    sd.add_argument("--finetune-loss", choices=("none", "scl", "proto_orig", "proto_mod"))
    sd.add_argument("--views", type=int)
    sd.add_argument("--light-identity", action="store_true", help="pin the view augmentation to identity")
    sd.add_argument("--files", nargs="+", help="restrict to these audio files")
    sd.add_argument("--seed", type=int)
    sd.add_argument("--workers", type=int)
    sd.add_argument("--out", help="prediction directory")
    sd.set_defaults(func=cmd_detect)

    se = sub.add_parser("evaluate", parents=[common], help="score predictions against references")
    se.add_argument("--predictions", required=True, help="prediction dir (or dir of run sub-dirs)")
    se.add_argument("--iou", type=float)
    se.add_argument("--out")
    se.set_defaults(func=cmd_evaluate)

    ss = sub.add_parser("synth", help="write the synthetic corpus")
    ss.add_argument("--out", required=True)
    ss.add_argument("--seed", type=int, default=0)
    ss.add_argument("-v", "--verbose", action="store_true")
    ss.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, (ProtocolError, EmptyInputError, ShapeError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
