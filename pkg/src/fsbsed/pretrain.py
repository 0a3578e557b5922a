"""Supervised contrastive pre-training of the encoder on labelled source data."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import FeatureConfig, centered_patch, load_audio, mel_spectrogram
from .augment import AugPolicy, augment_batch, train_policy
from .backbone import EncoderSpec, FewShotNet, ProjectorSpec
from .data import read_source_annotations
from .errors import EmptyInputError, NumericError
from .losses import (
    LossConfig,
    cross_entropy_loss,
    ntxent_loss,
    pretrain_loss_terms,
    total_coding_rate,
)

log = logging.getLogger(__name__)

PRETRAIN_LOSSES = ("ce", "simclr", "scl", "scl_tcr")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 100
    temperature: float = 0.06
    tcr_eps2: float = 0.05
    tcr_lambda: float = 1e-4
    schedule: str = "cosine"
    loss: str = "scl_tcr"
    anchor_reduction: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.loss not in PRETRAIN_LOSSES:
            raise ValueError(f"pretrain loss must be one of {PRETRAIN_LOSSES}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError("schedule must be 'cosine' or 'constant'")
        if min(self.batch_size, self.lr, self.temperature, self.tcr_eps2) <= 0 or self.epochs < 0:
            raise ValueError("batch_size, lr, temperature, tcr_eps2 must be positive")

    def loss_config(self) -> LossConfig:
        lam = self.tcr_lambda if self.loss == "scl_tcr" else 0.0
        return LossConfig(self.temperature, self.tcr_eps2, lam, self.anchor_reduction)


@dataclass
class SourceDataset:
    patches: np.ndarray  # [n, mel_bins, frames]
    labels: np.ndarray  # [n] int
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.patches) == 0:
            raise EmptyInputError("source dataset is empty")
        if len(self.patches) != len(self.labels):
            raise ValueError("patches and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1


def build_source_dataset(rows, feature_cfg: FeatureConfig) -> SourceDataset:
    """Event-centred fixed-length patches from every ``train`` manifest row."""
    patches, names = [], []
    for row in rows:
        if getattr(row, "split", "train") != "train":
            continue
        spec = mel_spectrogram(load_audio(row.audio, feature_cfg.sample_rate), feature_cfg)
        for a in read_source_annotations(row.annotations, default_label=row.dataset):
            if a.end <= a.start or a.start >= spec.duration:
                continue
            patches.append(centered_patch(spec, a.start, a.end, feature_cfg.patch_frames).values)
            names.append(f"{row.dataset}/{a.label}")
    class_names = sorted(set(names))
    index = {c: i for i, c in enumerate(class_names)}
    return SourceDataset(np.stack(patches), np.array([index[n] for n in names]), class_names)


def sample_originals(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Class-balanced indices, drawn in same-class pairs.

    A class with a single sample contributes that sample twice.
    """
    classes = np.unique(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    out = []
    for c in rng.choice(classes, size=math.ceil(batch_size / 2)):
        members = by_class[c]
        if len(members) >= 2:
            out.extend(rng.choice(members, size=2, replace=False))
        else:
            out.extend([members[0], members[0]])
    return np.asarray(out[:batch_size])


def build_two_view_batch(ds: SourceDataset, batch_size: int, rng: np.random.Generator, policy: AugPolicy | None = None):
    """``(views [2b, mel, frames], labels [2b])``; row ``i`` and ``i + b`` share an original."""
    policy = policy if policy is not None else train_policy()
    idx = sample_originals(ds.labels, batch_size, rng)
    originals = ds.patches[idx]
    v1 = augment_batch(originals, policy, rng)
    v2 = augment_batch(originals, policy, rng)
    labels = ds.labels[idx]
    return np.concatenate([v1, v2]), np.concatenate([labels, labels])


def cosine_lr(step, total_steps, lr_max):
    if total_steps <= 0:
        return lr_max
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def param_groups(model, weight_decay):
    """Weight decay on conv/linear weights only; norm parameters and biases are exempt."""
    decay, no_decay = [], []
    for module in model.modules():
        for name, p in module.named_parameters(recurse=False):
            is_norm = isinstance(module, torch.nn.modules.batchnorm._BatchNorm)
            (no_decay if is_norm or name == "bias" else decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


def compute_loss(model, x, labels, loss_name, loss_cfg: LossConfig):
    """Return ``(total, scl_or_nan, tcr)`` tensors for one two-view batch."""
    e, z = model(x)
    y = torch.as_tensor(labels)
    if loss_name in ("scl", "scl_tcr"):
        return pretrain_loss_terms(z, y, loss_cfg)
    tcr = total_coding_rate(z.detach(), loss_cfg.tcr_eps2)
    nan = torch.tensor(float("nan"))
    if loss_name == "simclr":
        b = len(y) // 2
        views = torch.arange(b).repeat(2)
        return ntxent_loss(z, views, loss_cfg.temperature, loss_cfg.anchor_reduction, normalize=False), nan, tcr
    return cross_entropy_loss(model.head(e), y), nan, tcr


def pretrain(ds: SourceDataset, cfg: TrainConfig = TrainConfig(), encoder_spec=EncoderSpec(),
             projector_spec=ProjectorSpec(), policy: AugPolicy | None = None, log_path=None):
    """Train encoder + projector; returns ``(model, history)``.

    ``history`` has one dict per epoch with keys epoch, scl, tcr, total, lr
    (epoch means). For the ``ce`` and ``simclr`` losses ``scl`` is NaN and
    ``total`` holds the optimised loss.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    policy = policy if policy is not None else train_policy(cfg.seed)
    model = FewShotNet(encoder_spec, projector_spec, n_classes=ds.n_classes if cfg.loss == "ce" else None)
    opt = torch.optim.SGD(param_groups(model, cfg.weight_decay), lr=cfg.lr, momentum=cfg.momentum)
    loss_cfg = cfg.loss_config()
    steps = max(1, math.ceil(len(ds) / cfg.batch_size))
    history = []
    writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "scl", "tcr", "total", "lr"])
    try:
        for epoch in range(cfg.epochs):
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr) if cfg.schedule == "cosine" else cfg.lr
            for g in opt.param_groups:
                g["lr"] = lr
            model.train()
            sums = np.zeros(3)
            for _ in range(steps):
                x, y = build_two_view_batch(ds, cfg.batch_size, rng, policy)
                total, scl, tcr = compute_loss(model, x, y, cfg.loss, loss_cfg)
                if not torch.isfinite(total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}: total={total.item()} scl={scl.item()} "
                        f"tcr={tcr.item()} batch mean={x.mean():.4g} std={x.std():.4g}"
                    )
                opt.zero_grad()
                total.backward()
                opt.step()
                sums += [scl.item(), tcr.item(), total.item()]
            row = {"epoch": epoch, "scl": sums[0] / steps, "tcr": sums[1] / steps, "total": sums[2] / steps, "lr": lr}
            history.append(row)
            log.info("epoch %d total=%.4f scl=%.4f tcr=%.3f lr=%.5f", epoch, row["total"], row["scl"], row["tcr"], lr)
            if writer is not None:
                writer.writerow([epoch, f"{row['scl']:.6f}", f"{row['tcr']:.6f}", f"{row['total']:.6f}", f"{lr:.8f}"])
    finally:
        if writer is not None:
            fh.close()
    model.drop_head()
    model.eval()
    return model, history

