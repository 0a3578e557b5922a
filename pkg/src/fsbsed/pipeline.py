"""File-level orchestration shared by the command line and the demos."""
from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import torch

from .audio import load_audio, mel_spectrogram
from .backbone import load_checkpoint, save_checkpoint
from .config import RunConfig, config_dict, save_config
from .data import ManifestRow, read_manifest, read_target_annotations
from .detection import detect, read_predictions, write_predictions
from .errors import ManifestError, ProtocolError
from .evaluation import EvalReport, evaluate_file
from .fewshot import build_episode, finetune, support_patches
from .pretrain import build_source_dataset, pretrain

log = logging.getLogger(__name__)

RESOLVED_CONFIG = "config.resolved.ini"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_pretrain(cfg: RunConfig, out_dir, rows=None):
    """Pre-train one backbone; writes checkpoint.pt, train_log.csv and the resolved config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = rows if rows is not None else read_manifest(cfg.manifest)
    ds = build_source_dataset([r for r in rows if r.split == "train"], cfg.features)
    policy = replace(cfg.train_policy, rng_seed=cfg.train.seed)
    model, history = pretrain(ds, cfg.train, cfg.encoder, cfg.projector, policy, log_path=out / "train_log.csv")
    ckpt = save_checkpoint(model, out / "checkpoint.pt", config=config_dict(cfg), classes=list(ds.class_names))
    save_config(cfg, out / RESOLVED_CONFIG)
    return model, history, ckpt


def detect_row(model, row: ManifestRow, cfg: RunConfig):
    """Events for one validation file, fine-tuning a private model copy when enabled."""
    wave = load_audio(row.audio, cfg.features.sample_rate)
    spec = mel_spectrogram(wave, cfg.features)
    annotations = read_target_annotations(row.annotations, Path(row.audio).name)
    episode = build_episode(annotations, wave.duration, cfg.episode)
    frames = cfg.features.patch_frames
    light = replace(cfg.light_policy, rng_seed=cfg.detect.seed)
    if cfg.finetune_enabled:
        patches, labels = support_patches(spec, episode, frames)
        model, _ = finetune(model, patches, labels, cfg.adapt_config(), replace(cfg.light_policy, rng_seed=cfg.adapt.seed))
    return detect(model, spec, episode, cfg.detect, light, target_frames=frames)


def _detect_job(args):
    checkpoint, row, cfg = args
    torch.set_num_threads(1)
    model, _ = load_checkpoint(checkpoint, cfg.encoder)
    return _safe_detect(model, row, cfg)


def _safe_detect(model, row, cfg):
    try:
        return "ok", detect_row(model, row, cfg), ""
    except ProtocolError as exc:
        return "skipped", [], str(exc)


def run_detect(cfg: RunConfig, checkpoint, out_dir, rows=None, model=None):
    """Predictions for every validation file; returns ``{audio name: events}``.

    Files that violate the few-shot protocol (e.g. fewer than five shots)
    are skipped and listed in run_report.csv.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = rows if rows is not None else read_manifest(cfg.manifest)
    rows = [r for r in rows if r.split == "validation"]
    if model is None:
        model, _ = load_checkpoint(checkpoint, cfg.encoder)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_detect_job, [(checkpoint, r, cfg) for r in rows]))
    else:
        results = [_safe_detect(model, r, cfg) for r in rows]
    predictions = {}
    with open(out / "run_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "audio", "status", "n_events", "message"])
        for row, (status, events, msg) in zip(rows, results):
            name = Path(row.audio).name
            w.writerow([row.dataset, name, status, len(events), msg])
            if status == "ok":
                write_predictions(out / f"{Path(name).stem}.csv", name, events)
                predictions[name] = events
            else:
                log.warning("skipped %s: %s", name, msg)
    save_config(cfg, out / RESOLVED_CONFIG)
    return predictions


def prediction_runs(pred_dir) -> list[Path]:
    """Run directories: sub-directories holding CSVs, or ``pred_dir`` itself."""
    pred_dir = Path(pred_dir)
    subs = sorted(d for d in pred_dir.iterdir() if d.is_dir() and any(d.glob("*.csv")))
    return subs or [pred_dir]


def evaluate_predictions(pred_dir, rows, iou_min) -> list[EvalReport]:
    rows = [r for r in rows if r.split == "validation"]
    reports, missing = [], []
    for run in prediction_runs(pred_dir):
        report = EvalReport()
        for row in rows:
            name = Path(row.audio).name
            pred_file = run / f"{Path(name).stem}.csv"
            if not pred_file.exists():
                missing.append(str(pred_file))
                continue
            ann = read_target_annotations(row.annotations, name)
            report.add(name, row.dataset, evaluate_file(read_predictions(pred_file), ann, iou_min))
        reports.append(report)
    if missing:
        raise ManifestError(f"missing prediction file(s): {', '.join(missing)}", missing)
    return reports
