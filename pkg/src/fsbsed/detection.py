"""Sliding-window nearest-prototype detection and onset/offset extraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from .audio import PATCH_FRAMES, MelPatch
from .augment import AugPolicy, light_policy
from .fewshot import (
    Episode,
    Prototypes,
    classify_queries,
    compute_prototypes,
    multiview_embed,
    query_patches,
    support_patches,
)


@dataclass(frozen=True)
class DetectConfig:
    views: int = 5
    embedding_space: str = "encoder"
    min_dur_frac: float = 0.6
    merge_gap_s: float | None = None  # None: one hop
    median_filter: int = 1  # odd window over labels; 1 disables smoothing
    timestamp: str = "center"  # moment attributed to each query window: "center" or "start"
    seed: int = 0

    def __post_init__(self):
        if self.embedding_space not in ("encoder", "projector"):
            raise ValueError("embedding_space must be 'encoder' or 'projector'")
        if self.timestamp not in ("center", "start"):
            raise ValueError("timestamp must be 'center' or 'start'")
        if self.views < 1 or self.median_filter < 1 or self.median_filter % 2 == 0:
            raise ValueError("views >= 1 and an odd median_filter >= 1 required")


def labels_to_events(labels, starts, window_len_s):
    """Maximal runs of positive windows as ``(onset, offset)`` pairs.

    The onset is the start of the first positive window of a run and the
    offset the start of the next negative window; a run reaching the last
    window closes at that window's end.
    """
    labels = np.asarray(labels, dtype=bool)
    starts = np.asarray(starts, dtype=np.float64)
    events, onset = [], None
    for lab, start in zip(labels, starts):
        if lab and onset is None:
            onset = float(start)
        elif not lab and onset is not None:
            events.append((onset, float(start)))
            onset = None
    if onset is not None:
        events.append((onset, float(starts[-1] + window_len_s)))
    return events


def post_process(events, min_dur_s=0.0, merge_gap_s=0.0):
    """Merge events separated by less than ``merge_gap_s``, then drop those shorter than ``min_dur_s``."""
    merged = []
    for on, off in sorted(events):
        if merged and on - merged[-1][1] < merge_gap_s:
            merged[-1] = (merged[-1][0], max(merged[-1][1], off))
        else:
            merged.append((on, off))
    return [(on, off) for on, off in merged if off - on >= min_dur_s]


def window_labels(model, spec: MelPatch, episode: Episode, cfg: DetectConfig = DetectConfig(),
                  policy: AugPolicy | None = None, prototypes: Prototypes | None = None,
                  target_frames: int = PATCH_FRAMES):
    """Positive/negative label per query window and the prototypes used."""
    policy = policy if policy is not None else light_policy(cfg.seed)
    if prototypes is None:
        sup, sup_labels = support_patches(spec, episode, target_frames)
        rng = np.random.default_rng([cfg.seed, 0])
        prototypes = compute_prototypes(multiview_embed(sup, model, cfg.views, policy, rng, cfg.embedding_space), sup_labels)
    rng = np.random.default_rng([cfg.seed, 1])
    q = multiview_embed(query_patches(spec, episode, target_frames), model, cfg.views, policy, rng, cfg.embedding_space)
    labels = classify_queries(q, prototypes)
    if cfg.median_filter > 1:
        labels = median_filter(labels.astype(np.uint8), size=cfg.median_filter, mode="nearest").astype(bool)
    return labels, prototypes


def detect(model, spec: MelPatch, episode: Episode, cfg: DetectConfig = DetectConfig(),
           policy: AugPolicy | None = None, prototypes: Prototypes | None = None,
           target_frames: int = PATCH_FRAMES):
    """Full detection for one file: prototypes, window labels, events, post-processing."""
    labels, _ = window_labels(model, spec, episode, cfg, policy, prototypes, target_frames)
    if cfg.timestamp == "center":
        half = episode.window_len_s / 2
        events = labels_to_events(labels, episode.query_starts + half, half)
    else:
        events = labels_to_events(labels, episode.query_starts, episode.window_len_s)
    merge_gap = episode.hop_s if cfg.merge_gap_s is None else cfg.merge_gap_s
    return post_process(events, cfg.min_dur_frac * episode.mean_shot_duration, merge_gap)


def write_predictions(path, audio_name, events):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Audiofilename", "Starttime", "Endtime"])
        for on, off in events:
            w.writerow([audio_name, f"{on:.3f}", f"{off:.3f}"])


def read_predictions(path):
    with open(path, newline="") as fh:
        return sorted((float(r["Starttime"]), float(r["Endtime"])) for r in csv.DictReader(fh))
