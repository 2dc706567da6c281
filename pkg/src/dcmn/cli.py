"""Command-line entry point: simulate, train, evaluate, ablate, mobility.

Every command writes a run manifest before any artifact, writes outputs via a
temp-file-plus-rename so partial files never appear, and is reproducible:
identical inputs and seed give byte-identical artifacts (manifests contain
timestamps and are excluded from that guarantee). The DCMN_LOG environment
variable sets the logging level.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, data, mobility, simulate, train
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainError,
    OracleError,
    ParseError,
    PlanError,
    ReportError,
    VocabularyError,
)
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("dcmn")

USAGE_ERRORS = (
    ConfigError,
    ParseError,
    VocabularyError,
    PlanError,
    ReportError,
    DomainError,
    DimensionError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
)
NUMERIC_ERRORS = (DivergenceError, OracleError)


def _setup_logging():
    level_name = os.environ.get("DCMN_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _atomic_write_bytes(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _atomic_write_json(path, obj):
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _atomic_write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _load_json_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def _write_manifest(path, command, args, seed, config_paths):
    manifest = {
        "command": command,
        "argv": [f"{k}={v}" for k, v in sorted(vars(args).items()) if k != "func"],
        "config_paths": [str(p) for p in config_paths if p],
        "seed": seed,
        "code_version": __version__,
        "output": str(getattr(args, "out", "")),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    _atomic_write_json(path, manifest)
    return Path(path).name


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_store(path, vocabulary=None):
    recordings = data.load_recordings(path, vocabulary=vocabulary)
    return train.FrameStore.from_recordings(recordings, vocabulary=vocabulary)


def cmd_simulate(args):
    cfg = simulate.sim_config_from_json(_load_json_file(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"), "simulate", args, cfg.seed, [args.config]
    )
    recordings = simulate.generate_recordings(cfg, jobs=args.jobs)
    tmp = out.with_name(out.name + ".tmp")
    data.write_recordings(tmp, recordings)
    os.replace(tmp, out)
    log.info("wrote %s (%d subject-days)", out, len(recordings))
    return 0


def _train_config(args):
    cfg = train.TrainConfig.from_json(Path(args.config).read_text()) if args.config \
        else train.TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "ablation", None) is not None:
        cfg = replace(cfg, ablation=args.ablation)
    return cfg


def cmd_train(args):
    cfg = _train_config(args)
    out = _out_dir(args)
    manifest = _write_manifest(
        out / "manifest.json", "train", args, cfg.seed, [args.config, args.data]
    )
    ckpt_path = out / "model.ckpt"
    log_path = out / "training_log.csv"

    initial_model, start_epoch, old_history = None, 1, []
    if args.resume:
        if not ckpt_path.exists():
            raise ConfigError(f"--resume: no checkpoint at {ckpt_path}")
        initial_model, vocabulary, stats, _ = load_checkpoint(ckpt_path)
        store = _load_store(args.data, vocabulary=vocabulary)
        if log_path.exists():
            old_history = train.read_training_log(log_path)
            start_epoch = old_history[-1][0] + 1
    else:
        store = _load_store(args.data)
        vocabulary = store.vocabulary
        stats = store.fit_stats(store.subjects())

    samples = store.samples(store.subjects(), stats, cfg.T, cfg.train_stride)
    log.info("training on %d windows from %d subjects", len(samples), len(store.subjects()))
    result = train.train(
        samples, cfg, vocabulary, initial_model=initial_model, start_epoch=start_epoch
    )

    tmp = ckpt_path.with_name(ckpt_path.name + ".tmp")
    save_checkpoint(
        tmp,
        result.model,
        vocabulary,
        stats,
        extra={
            "ablation": cfg.ablation,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
            "last_epoch": result.history[-1][0] if result.history else start_epoch - 1,
            "manifest": manifest,
        },
    )
    os.replace(tmp, ckpt_path)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "train_loss", "val_accuracy"])
    for epoch, loss, acc in old_history + result.history:
        writer.writerow([epoch, repr(loss), repr(acc)])
    _atomic_write_bytes(log_path, buf.getvalue().encode("utf-8"))
    log.info("best epoch %d (val accuracy %.4f)", result.best_epoch, result.best_val_accuracy)
    return 0


def _decode_mask(args, vocabulary):
    if not getattr(args, "mask_transitions", False):
        return None
    return simulate.default_floorplan().forbidden_transition_mask(vocabulary)


def cmd_evaluate(args):
    model, vocabulary, stats, extra = load_checkpoint(args.checkpoint)
    if stats is None:
        raise ConfigError(f"{args.checkpoint}: checkpoint lacks normalization statistics")
    out = _out_dir(args)
    manifest = _write_manifest(out / "manifest.json", "evaluate", args, args.seed, [args.data])
    store = _load_store(args.data, vocabulary=vocabulary)
    samples = store.samples(store.subjects(), stats, model.config.T, model.config.T)
    mask = _decode_mask(args, vocabulary)
    metrics = train.evaluate(model, samples, forbidden_mask=mask)
    report = {
        "command": "evaluate",
        "variant": model.ablation,
        "checkpoint": Path(args.checkpoint).name,
        "masked_decoding": bool(args.mask_transitions),
        "n_windows": len(samples),
        "precision": metrics.precision,
        "accuracy": metrics.accuracy,
        "f1": metrics.f1,
        "manifest": manifest,
    }
    _atomic_write_json(out / "report.json", report)
    _atomic_write_csv(
        out / "report.csv",
        ["variant", "precision", "accuracy", "f1"],
        [[model.ablation, repr(metrics.precision), repr(metrics.accuracy), repr(metrics.f1)]],
    )
    print(f"precision={metrics.precision:.2f} accuracy={metrics.accuracy:.2f} f1={metrics.f1:.2f}")
    return 0


def cmd_ablate(args):
    cfg = _train_config(args)
    out = _out_dir(args)
    manifest = _write_manifest(
        out / "manifest.json", "ablate", args, cfg.seed, [args.config, args.data]
    )
    store = _load_store(args.data)
    reports = train.ablate(store, args.cv_mode, cfg, jobs=args.jobs)
    _atomic_write_json(
        out / "ablation.json",
        {
            "mode": args.cv_mode,
            "manifest": manifest,
            "reports": [reports[v].to_json_dict() for v in train.ABLATIONS],
        },
    )
    rows = []
    for variant in train.ABLATIONS:
        for row in reports[variant].to_csv_rows():
            rows.append(
                [row["mode"], row["variant"], row["fold"],
                 repr(row["precision"]), repr(row["accuracy"]), repr(row["f1"])]
            )
    _atomic_write_csv(
        out / "ablation.csv", ["mode", "variant", "fold", "precision", "accuracy", "f1"], rows
    )
    for variant in train.ABLATIONS:
        mean = reports[variant].mean
        print(f"{variant}: precision={mean.precision:.2f} accuracy={mean.accuracy:.2f} "
              f"f1={mean.f1:.2f}")
    return 0


def cmd_mobility(args):
    out = _out_dir(args)
    manifest = _write_manifest(
        out / "manifest.json", "mobility", args, args.seed, [args.data]
    )
    floorplan = simulate.default_floorplan()
    if args.checkpoint:
        model, vocabulary, stats, _ = load_checkpoint(args.checkpoint)
        if stats is None:
            raise ConfigError(f"{args.checkpoint}: checkpoint lacks normalization statistics")
        store = _load_store(args.data, vocabulary=vocabulary)
        samples = store.samples(store.subjects(), stats, model.config.T, model.config.T)
        if not samples:
            raise ReportError("no complete windows in the dataset")
        dtype = next(model.parameters()).dtype
        rssi, accel, labels = train._to_tensors(samples, dtype)
        pred = train.predict(model, rssi, accel, forbidden_mask=_decode_mask(args, vocabulary))
        pred_seqs = mobility.sequences_from_windows(samples, pred)
        truth_seqs = mobility.sequences_from_windows(samples, labels.numpy())
    else:
        vocabulary = floorplan.rooms
        store = _load_store(args.data, vocabulary=vocabulary)
        truth_seqs = mobility.sequences_from_frames(store.frames, vocabulary)
        pred_seqs = truth_seqs
    floorplan.forbidden_transition_mask(vocabulary)  # validates room compatibility
    report = mobility.mobility_report(pred_seqs, truth_seqs, floorplan, smooth=args.smooth)
    obj = report.to_json_dict()
    obj["manifest"] = manifest
    _atomic_write_json(out / "mobility.json", obj)
    _atomic_write_csv(
        out / "mobility.csv",
        ["metric", "subject", "day", "value"],
        [[m, s, d, repr(v)] for m, s, d, v in report.rows],
    )
    print(
        f"daily transitions: predicted {report.daily_mean_pred:.2f} "
        f"truth {report.daily_mean_truth:.2f} offset {report.daily_offset:.2f}; "
        f"duration offset {report.duration_offset:.2f}s"
    )
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dcmn",
        description="Dual-modality room-level indoor localisation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"dcmn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labeled dataset")
    p.add_argument("--config", required=True, help="simulator JSON config")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a recording CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON (defaults used if absent)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablation", choices=train.ABLATIONS, default=None)
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint already in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask-transitions", action="store_true",
                   help="ban non-adjacent room transitions during decoding")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="cross-validate every model variant")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cv-mode", choices=train.CV_MODES, default="all-hc")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mobility", help="mobility report from predictions or ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="decode predictions with this model (omit to report ground truth)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask-transitions", action="store_true")
    p.add_argument("--smooth", action="store_true", help="median-smooth predicted sequences")
    p.set_defaults(func=cmd_mobility)
    return parser


def main(argv=None):
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except USAGE_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        log.error("%s", exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
