"""Command-line entry point: ``psforensics <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ..config import ConfigFileError, ExperimentConfig, load_config
from ..imaging import ImageError
from ..models import ConfigError, ModelConfig, FAMILIES
from ..nn import NonFiniteError
from ..nn.checkpoint import CheckpointError
from ..printscan import ProfileError, identity_profile
from .dataset import (DataError, DatasetManifest, build_composite, generate_dataset, jpeg_dataset,
                      printscan_dataset)
from .report import emit_report, load_reports
from .training import NumericError, cross_eval, evaluate, printer_id_experiment, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("psforensics")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI experiment config (default: packaged)")
    p.add_argument("--seed", type=int, help="RNG seed (default: config [train] seed, else 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _train_overrides(p):
    g = p.add_argument_group("training overrides")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr0", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--family", choices=FAMILIES, default="proposed")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    root = _Parser(prog="psforensics", description="Print-scan manipulation forensics experiments.")
    sub = root.add_subparsers(dest="command", parser_class=_Parser, required=True)

    ds = sub.add_parser("dataset", help="generate and transform block datasets")
    dsub = ds.add_subparsers(dest="dataset_command", parser_class=_Parser, required=True)

    p = dsub.add_parser("synth", parents=[common], help="write a synthetic source corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=200)

    p = dsub.add_parser("gen", parents=[common], help="manipulate, crop and block source images")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--class-set", choices=("4c", "6c"), default="4c")
    p.add_argument("--block-size", type=int)
    p.add_argument("--selection", help="all, an integer count, or central(k)")
    p.add_argument("--no-crop", action="store_true", help="block the full image without cropping")
    p.add_argument("--workers", type=int, default=0)

    p = dsub.add_parser("printscan", parents=[common], help="print-scan every parent with a profile")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--profile", required=True, help="profile name from the config, or 'identity'")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=0)

    p = dsub.add_parser("jpeg", parents=[common], help="JPEG-compress every parent")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--quality", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = dsub.add_parser("composite", parents=[common], help="balanced union of printer datasets")
    p.add_argument("--manifests", type=Path, nargs="+", required=True)
    p.add_argument("--include-original", action="store_true")
    p.add_argument("--original", type=Path, help="original manifest (default: from derived_from)")
    p.add_argument("--name", default=None)
    p.add_argument("--out", type=Path, required=True, help="output manifest path")

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--history", type=Path, help="write per-epoch history JSON here")
    _train_overrides(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--out", type=Path, help="write the EvalReport JSON here")

    p = sub.add_parser("cross-eval", parents=[common], help="evaluate a checkpoint on several datasets")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifests", type=Path, nargs="+", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.add_argument("--out", type=Path, help="report directory (tables, matrices, heat maps)")

    p = sub.add_parser("printer-id", parents=[common], help="train a printer classifier on pristine blocks")
    p.add_argument("--manifests", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _train_overrides(p)

    p = sub.add_parser("report", parents=[common], help="render EvalReport JSON files")
    p.add_argument("inputs", type=Path, nargs="+", help="report JSON files or directories")
    p.add_argument("--out", type=Path, required=True)
    return root


# ------------------------------------------------------------------ handlers


def _seed(args, cfg: ExperimentConfig) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.train.get("", {}).get("seed", 0))


def _manipulations(cfg: ExperimentConfig):
    return dict(cfg.manipulations)


def cmd_dataset_synth(args, cfg):
    from .synth import write_corpus

    ds = cfg.dataset
    paths = write_corpus(args.out, args.count, ds.parent_height, ds.parent_width, _seed(args, cfg))
    print(f"wrote {len(paths)} images to {args.out}")


def cmd_dataset_gen(args, cfg):
    ds = cfg.dataset
    crop = None if args.no_crop else (ds.crop_height, ds.crop_width)
    m = generate_dataset(args.source, args.class_set, args.block_size or ds.block_size, args.out,
                         seed=_seed(args, cfg), crop=crop, selection=args.selection or ds.selection,
                         val_fraction=ds.val_fraction, manipulations=_manipulations(cfg),
                         workers=args.workers)
    _print_counts(m)


def _print_counts(m: DatasetManifest):
    print(f"{m.path}: {len(m.records)} blocks")
    for split in ("train", "val"):
        counts = m.class_counts(split)
        print(f"  {split}: " + ", ".join(f"{k}={counts[k]}" for k in m.labels))


def cmd_dataset_printscan(args, cfg):
    profile = identity_profile() if args.profile == "identity" else cfg.profile(args.profile)
    m = printscan_dataset(DatasetManifest.load(args.manifest), profile, _seed(args, cfg), args.out,
                          workers=args.workers)
    _print_counts(m)


def cmd_dataset_jpeg(args, cfg):
    m = jpeg_dataset(DatasetManifest.load(args.manifest), args.quality or cfg.dataset.jpeg_attack_quality,
                     args.out)
    _print_counts(m)


def cmd_dataset_composite(args, cfg):
    sources = [DatasetManifest.load(p) for p in args.manifests]
    original = DatasetManifest.load(args.original) if args.original else None
    name = args.name or ("composite-full" if args.include_original else "composite")
    m = build_composite(sources, args.include_original, _seed(args, cfg), original, name=name)
    m.save(args.out)
    _print_counts(DatasetManifest.load(args.out))


def _train_cfg(args, cfg):
    over = {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size),
                              ("lr0", args.lr0), ("patience", args.patience)) if v is not None}
    over["seed"] = _seed(args, cfg)
    return cfg.train_config(args.family, **over)


def _model_cfg(cfg, family, num_classes):
    return ModelConfig.for_family(family, num_classes=num_classes, **cfg.model)


def _history_json(result):
    return [vars(h) for h in result.history]


def cmd_train(args, cfg):
    manifest = DatasetManifest.load(args.manifest)
    mcfg = _model_cfg(cfg, args.family, len(manifest.labels))
    tcfg = _train_cfg(args, cfg)
    result = train(mcfg, manifest, tcfg, checkpoint=args.out, model_name=args.family)
    if args.history:
        args.history.write_text(json.dumps(_history_json(result), indent=1))
    print(f"best val accuracy {result.best_val_accuracy:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint}")


def cmd_eval(args, cfg):
    rep = evaluate(args.checkpoint, DatasetManifest.load(args.manifest), args.split)
    if args.out:
        rep.save(args.out)
    print(f"{rep.model_name} on {rep.dataset_name}: accuracy {rep.accuracy:.4f} ({rep.total} blocks)")
    for label, row in zip(rep.labels, rep.confusion):
        print(f"  {label:>12} " + " ".join(f"{int(v):6d}" for v in row))


def cmd_cross_eval(args, cfg):
    rows = cross_eval(args.checkpoint, [DatasetManifest.load(p) for p in args.manifests], args.split)
    print("dataset,accuracy")
    for name, acc, _ in rows:
        print(f"{name},{acc:.4f}")
    if args.out:
        emit_report([r for _, _, r in rows], args.out)


def cmd_printer_id(args, cfg):
    manifests = [DatasetManifest.load(p) for p in args.manifests]
    args.out.mkdir(parents=True, exist_ok=True)
    mcfg = _model_cfg(cfg, args.family, len(manifests))
    report, result = printer_id_experiment(manifests, mcfg, _train_cfg(args, cfg),
                                           checkpoint=args.out / "printer-id.ckpt")
    (args.out / "history.json").write_text(json.dumps(_history_json(result), indent=1))
    emit_report([report], args.out)
    print(f"printer identification accuracy {report.accuracy:.4f} over {report.labels}")


def cmd_report(args, cfg):
    reports = load_reports(args.inputs)
    if not reports:
        raise DataError("no EvalReport JSON found in the given inputs")
    written = emit_report(reports, args.out)
    print(f"wrote {len(written['confusion'])} confusion matrices to {args.out}")


HANDLERS = {
    ("dataset", "synth"): cmd_dataset_synth,
    ("dataset", "gen"): cmd_dataset_gen,
    ("dataset", "printscan"): cmd_dataset_printscan,
    ("dataset", "jpeg"): cmd_dataset_jpeg,
    ("dataset", "composite"): cmd_dataset_composite,
    ("train", None): cmd_train,
    ("eval", None): cmd_eval,
    ("cross-eval", None): cmd_cross_eval,
    ("printer-id", None): cmd_printer_id,
    ("report", None): cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = HANDLERS[(args.command, getattr(args, "dataset_command", None))]
    try:
        cfg = load_config(args.config)
        handler(args, cfg)
    except (NumericError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ImageError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigFileError, ConfigError, ProfileError, KeyError, ValueError) as exc:
        # bad flag values or config entries are usage errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
