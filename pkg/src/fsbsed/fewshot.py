"""Per-file few-shot episodes, prototypes and support-set fine-tuning."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import MelPatch, slice_patch
from .augment import AugPolicy, augment_batch, light_policy
from .backbone import FewShotNet, as_input, embed
from .data import Annotation, read_target_annotations
from .errors import NumericError, ProtocolError
from .losses import finetune_proto_loss, protonets_loss, scl_loss
from .pretrain import param_groups

log = logging.getLogger(__name__)

N_SHOTS = 5
FINETUNE_LOSSES = ("scl", "proto_orig", "proto_mod")


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 40
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 1e-4
    loss: str = "proto_mod"
    temperature: float = 0.06
    freeze_norm_stats: bool = True  # five shots are too few to re-estimate running statistics
    seed: int = 0

    def __post_init__(self):
        if self.loss not in FINETUNE_LOSSES:
            raise ValueError(f"finetune loss must be one of {FINETUNE_LOSSES}")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")


@dataclass(frozen=True)
class EpisodeConfig:
    n_shots: int = N_SHOTS
    neg_per_pos: int = 5
    min_window_s: float = 0.1
    max_window_s: float = 1.0
    seed: int = 0


@dataclass
class Episode:
    pos_segments: list
    neg_segments: list
    query_starts: np.ndarray
    window_len_s: float
    hop_s: float
    duration: float
    unk_segments: list = field(default_factory=list)

    @property
    def support_end(self) -> float:
        return self.pos_segments[-1][1]

    @property
    def query_windows(self):
        return [(float(s), float(s) + self.window_len_s) for s in self.query_starts]

    @property
    def mean_shot_duration(self) -> float:
        return float(np.mean([e - s for s, e in self.pos_segments]))


@dataclass(frozen=True)
class Prototypes:
    pos: np.ndarray
    neg: np.ndarray

    def swapped(self) -> "Prototypes":
        return Prototypes(self.neg, self.pos)


def _complement(intervals, lo, hi):
    gaps, cursor = [], lo
    for s, e in sorted(intervals):
        if s > cursor:
            gaps.append((cursor, min(s, hi)))
        cursor = max(cursor, e)
        if cursor >= hi:
            break
    if cursor < hi:
        gaps.append((cursor, hi))
    return [(s, e) for s, e in gaps if e - s > 1e-9]


def sample_negatives(gaps, window, n_max, rng: np.random.Generator):
    """Non-overlapping windows placed uniformly inside the gaps.

    Gaps too short to hold a single window are used whole when nothing
    else fits.
    """
    slots = []
    for s, e in gaps:
        m = int(math.floor((e - s) / window + 1e-9))
        if m == 0:
            continue
        offset = rng.uniform(0.0, (e - s) - m * window) if (e - s) - m * window > 1e-12 else 0.0
        slots += [(s + offset + k * window, s + offset + (k + 1) * window) for k in range(m)]
    if not slots:
        slots = list(gaps)
    if len(slots) > n_max:
        keep = rng.choice(len(slots), size=n_max, replace=False)
        slots = [slots[i] for i in keep]
    return sorted(slots)


def build_episode(annotations: list[Annotation], duration: float, cfg: EpisodeConfig = EpisodeConfig()) -> Episode:
    """Support shots, sampled negatives and query windows for one file.

    Only the first ``n_shots`` POS rows (by onset) and UNK rows that start
    before the end of the last shot are consulted.
    """
    pos = sorted((a.start, a.end) for a in annotations if a.label == "POS")
    if len(pos) < cfg.n_shots:
        raise ProtocolError(f"need {cfg.n_shots} POS events, found {len(pos)}")
    shots = pos[: cfg.n_shots]
    t_end = shots[-1][1]
    unk = sorted((a.start, a.end) for a in annotations if a.label == "UNK" and a.start < t_end)
    mean_dur = float(np.mean([e - s for s, e in shots]))
    window = min(max(mean_dur, cfg.min_window_s), cfg.max_window_s)
    hop = window / 2
    gaps = _complement(shots + unk, 0.0, t_end)
    if not gaps:
        raise ProtocolError("no time outside the positive shots to draw negatives from")
    rng = np.random.default_rng(cfg.seed)
    negs = sample_negatives(gaps, window, cfg.neg_per_pos * cfg.n_shots, rng)
    remainder = duration - t_end
    if remainder < window - 1e-9:
        raise ProtocolError(f"only {remainder:.3f}s after the shots, shorter than the {window:.3f}s window")
    n_q = int(math.floor((remainder - window) / hop + 1e-9)) + 1
    starts = t_end + hop * np.arange(n_q)
    return Episode(shots, negs, starts, window, hop, duration, unk)


def episode_from_csv(csv_path, audio_name, duration, cfg: EpisodeConfig = EpisodeConfig()) -> Episode:
    return build_episode(read_target_annotations(csv_path, audio_name), duration, cfg)


def support_patches(spec: MelPatch, episode: Episode, target_frames: int):
    """``(patches, labels)`` with label 1 for positive shots and 0 for negatives."""
    segs = list(episode.pos_segments) + list(episode.neg_segments)
    patches = np.stack([slice_patch(spec, s, e, target_frames).values for s, e in segs])
    labels = np.array([1] * len(episode.pos_segments) + [0] * len(episode.neg_segments))
    return patches, labels


def query_patches(spec: MelPatch, episode: Episode, target_frames: int):
    return np.stack([slice_patch(spec, s, e, target_frames).values for s, e in episode.query_windows])


def multiview_embed(patches, model: FewShotNet, views: int = 5, policy: AugPolicy | None = None,
                    rng: np.random.Generator | None = None, space: str = "encoder") -> np.ndarray:
    """Mean embedding over ``views`` augmented copies of each patch ``[n, mel, frames]``."""
    if views < 1:
        raise ValueError("views must be >= 1")
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    policy = policy if policy is not None else light_policy()
    rng = rng if rng is not None else np.random.default_rng(policy.rng_seed)
    stacked = np.concatenate([augment_batch(patches, policy, rng) for _ in range(views)])
    emb = embed(model, stacked, space).reshape(views, len(patches), -1).mean(axis=0)
    return emb[0] if single else emb


def compute_prototypes(embeddings, labels) -> Prototypes:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ProtocolError("prototypes need both positive and negative examples")
    return Prototypes(embeddings[labels].mean(axis=0), embeddings[~labels].mean(axis=0))


def classify_queries(q, protos: Prototypes) -> np.ndarray:
    """True where the positive prototype is strictly nearer; ties go negative."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    d_pos = np.linalg.norm(q - protos.pos, axis=1)
    d_neg = np.linalg.norm(q - protos.neg, axis=1)
    return d_pos < d_neg


def classify_query(q, protos: Prototypes) -> str:
    return "pos" if classify_queries(q, protos)[0] else "neg"


def balanced_support(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices with the minority class oversampled to the majority count."""
    pos, neg = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    small, big = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    if len(small) == 0:
        return np.arange(len(labels))
    extra = rng.choice(small, size=len(big) - len(small), replace=True)
    return np.concatenate([big, small, extra])


def support_loss(z, labels, cfg: AdaptConfig):
    if cfg.loss == "proto_mod":
        return finetune_proto_loss(z, labels, normalize=False)
    if cfg.loss == "proto_orig":
        return protonets_loss(z, labels, normalize=False)
    return scl_loss(z, labels, cfg.temperature, normalize=False)


def finetune(model: FewShotNet, patches, labels, cfg: AdaptConfig = AdaptConfig(), policy: AugPolicy | None = None):
    """Fine-tune a copy of ``model`` on the support set; returns ``(adapted, history)``.

    Each epoch is one class-balanced batch of two light-policy views per
    support patch. ``history`` holds the per-epoch loss.
    """
    adapted = copy.deepcopy(model)
    if cfg.epochs == 0:
        return adapted.eval(), []
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    policy = policy if policy is not None else light_policy(cfg.seed)
    opt = torch.optim.SGD(param_groups(adapted, cfg.weight_decay), lr=cfg.lr, momentum=cfg.momentum)
    labels = np.asarray(labels)
    history = []
    adapted.train()
    if cfg.freeze_norm_stats:
        for m in adapted.modules():
            if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
                m.eval()
    for epoch in range(cfg.epochs):
        idx = balanced_support(labels, rng)
        originals = np.asarray(patches)[idx]
        x = np.concatenate([augment_batch(originals, policy, rng), augment_batch(originals, policy, rng)])
        y = torch.as_tensor(np.concatenate([labels[idx], labels[idx]]))
        _, z = adapted(as_input(x))
        loss = support_loss(z, y, cfg)
        if not torch.isfinite(loss):
            raise NumericError(f"fine-tuning diverged at epoch {epoch}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    return adapted.eval(), history
