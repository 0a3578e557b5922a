"""Contrastive, coding-rate and prototype objectives on projected embeddings.

Every loss takes a float tensor ``z`` of shape ``[n, d]``. Unless
``normalize=False`` rows are L2-normalised first, so callers may pass raw
projector outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.06
    tcr_eps2: float = 0.05
    tcr_lambda: float = 1e-4
    anchor_reduction: str = "mean"

    def __post_init__(self):
        if self.temperature <= 0 or self.tcr_eps2 <= 0 or self.tcr_lambda < 0:
            raise ValueError("need temperature > 0, tcr_eps2 > 0, tcr_lambda >= 0")
        if self.anchor_reduction not in ("mean", "sum"):
            raise ValueError("anchor_reduction must be 'mean' or 'sum'")


@dataclass
class ProjectedBatch:
    """Two-view batch: rows ``i`` and ``i + b`` are the views of original ``i``."""

    z: torch.Tensor
    labels: torch.Tensor
    views: torch.Tensor

    @classmethod
    def from_views(cls, z1, z2, labels, normalize=True):
        z = torch.cat([z1, z2], dim=0)
        if normalize:
            z = F.normalize(z, dim=1, eps=1e-12)
        labels = torch.as_tensor(labels)
        idx = torch.arange(len(z1))
        return cls(z, torch.cat([labels, labels]), torch.cat([idx, idx]))


def _reduce(per_anchor: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return per_anchor.mean()
    if reduction == "sum":
        return per_anchor.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def _prep(z, normalize):
    if not torch.isfinite(z).all():
        raise NumericError("non-finite embeddings")
    return F.normalize(z, dim=1, eps=1e-12) if normalize else z


def scl_loss(z, labels, temperature=0.06, reduction="mean", normalize=True):
    """Supervised contrastive loss; the denominator runs over all rows but the anchor."""
    z = _prep(z, normalize)
    labels = torch.as_tensor(labels, device=z.device)
    n = z.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    n_pos = pos.sum(1)
    if (n_pos == 0).any():
        raise ConfigurationError("every anchor needs at least one positive in the batch")
    sim = z @ z.T / temperature
    log_prob = sim - torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1, keepdim=True)
    per_anchor = -(log_prob * pos).sum(1) / n_pos
    return _reduce(per_anchor, reduction)


def total_coding_rate(z, eps2=0.05):
    """``0.5 * logdet(I + d/(b*eps2) Z Z^T)`` through the spectrum of the smaller Gram matrix."""
    if not torch.isfinite(z).all():
        raise NumericError("total_coding_rate got non-finite input")
    b, d = z.shape
    scale = d / (b * eps2)
    gram = z.T @ z if d <= b else z @ z.T
    gram = 0.5 * (gram + gram.T)
    eig = torch.linalg.eigvalsh(gram).clamp(min=0)
    return 0.5 * torch.log1p(scale * eig).sum()


def pretrain_loss_terms(z, labels, cfg: LossConfig = LossConfig()):
    """Return ``(total, scl, tcr)`` for the regularised objective."""
    z = _prep(z, True)
    scl = scl_loss(z, labels, cfg.temperature, cfg.anchor_reduction, normalize=False)
    tcr = total_coding_rate(z, cfg.tcr_eps2)
    return scl - cfg.tcr_lambda * tcr, scl, tcr


def pretrain_loss(z, labels, cfg: LossConfig = LossConfig()):
    return pretrain_loss_terms(z, labels, cfg)[0]


def class_prototypes(z, labels):
    """Sorted class ids and their mean rows."""
    labels = torch.as_tensor(labels, device=z.device)
    classes, inverse = torch.unique(labels, sorted=True, return_inverse=True)
    onehot = F.one_hot(inverse, len(classes)).to(z.dtype)
    protos = (onehot.T @ z) / onehot.sum(0)[:, None]
    return classes, protos, inverse


def prototype_logit_loss(sims, own, exclude_own, reduction="mean"):
    """Softmax-style loss over anchor-to-prototype similarities ``sims [n, C]``.

    ``own`` holds each anchor's class column. With ``exclude_own`` the
    anchor's own prototype is left out of the normaliser.
    """
    own_sim = sims.gather(1, own[:, None]).squeeze(1)
    if exclude_own:
        mask = F.one_hot(own, sims.shape[1]).bool()
        denom = torch.logsumexp(sims.masked_fill(mask, float("-inf")), dim=1)
    else:
        denom = torch.logsumexp(sims, dim=1)
    return _reduce(denom - own_sim, reduction)


def _proto_loss(z, labels, normalize, exclude_own, reduction):
    z = _prep(z, normalize)
    classes, protos, inverse = class_prototypes(z, labels)
    if len(classes) < 2:
        raise ConfigurationError("prototype losses need at least two classes in the batch")
    return prototype_logit_loss(z @ protos.T, inverse, exclude_own, reduction)


def finetune_proto_loss(z, labels, normalize=True, reduction="mean"):
    """Prototype loss whose denominator omits the anchor's own class prototype."""
    return _proto_loss(z, labels, normalize, True, reduction)


def protonets_loss(z, labels, normalize=True, reduction="mean"):
    """Standard prototype softmax loss (own prototype kept in the denominator)."""
    return _proto_loss(z, labels, normalize, False, reduction)


def ntxent_loss(z, views, temperature=0.06, reduction="mean", normalize=True):
    """Self-supervised two-view loss; labels are ignored, and the positive
    pair is excluded from the denominator."""
    z = _prep(z, normalize)
    views = torch.as_tensor(views, device=z.device)
    n = z.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    pair = (views[:, None] == views[None, :]) & ~eye
    if (pair.sum(1) != 1).any():
        raise ConfigurationError("each row needs exactly one paired view")
    if n < 3:
        raise ConfigurationError("ntxent needs at least two originals")
    sim = z @ z.T / temperature
    pos_sim = (sim * pair).sum(1)
    denom = torch.logsumexp(sim.masked_fill(eye | pair, float("-inf")), dim=1)
    return _reduce(denom - pos_sim, reduction)


def cross_entropy_loss(logits, labels):
    labels = torch.as_tensor(labels, device=logits.device)
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label out of range for the given logits")
    return F.cross_entropy(logits, labels)


def effective_rank(z) -> float:
    """exp of the entropy of the normalised singular-value distribution."""
    if isinstance(z, torch.Tensor):
        z = z.detach().cpu().numpy()
    s = np.linalg.svd(np.asarray(z, dtype=np.float64), compute_uv=False)
    total = s.sum()
    if total <= 0:
        raise NumericError("effective rank undefined for a zero matrix")
    p = s[s > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))
