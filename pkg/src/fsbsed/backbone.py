"""Residual CNN encoder, projector head and checkpoint I/O."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ShapeError

CHECKPOINT_FORMAT = "fsbsed-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    block_widths: tuple = (64, 128, 256)
    convs_per_block: int = 3
    pool_kernels: tuple = ((2, 2), (2, 2), (1, 2))  # (freq, time)

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(int(w) for w in self.block_widths))
        object.__setattr__(self, "pool_kernels", tuple(tuple(int(k) for k in p) for p in self.pool_kernels))
        if len(self.block_widths) != 3 or len(self.pool_kernels) != 3:
            raise ValueError("encoder has exactly three blocks")
        if any(b <= a for a, b in zip(self.block_widths, self.block_widths[1:])):
            raise ValueError("block widths must be strictly increasing")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")

    @property
    def embedding_dim(self) -> int:
        return self.block_widths[-1]


@dataclass(frozen=True)
class ProjectorSpec:
    hidden_dim: int = 256
    output_dim: int = 128


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, n_convs, pool):
        super().__init__()
        layers = []
        for k in range(n_convs):
            layers += [nn.Conv2d(c_in if k == 0 else c_out, c_out, 3, padding=1, bias=False), nn.BatchNorm2d(c_out)]
            if k < n_convs - 1:
                layers.append(nn.ReLU(inplace=True))
        self.body = nn.Sequential(*layers)
        if c_in != c_out:
            self.skip = nn.Sequential(nn.Conv2d(c_in, c_out, 1, bias=False), nn.BatchNorm2d(c_out))
        else:
            self.skip = nn.Identity()
        self.pool = nn.MaxPool2d(pool)

    def forward(self, x):
        return self.pool(F.relu(self.body(x) + self.skip(x)))


class Encoder(nn.Module):
    """Three residual blocks then global max pooling over (freq, time)."""

    def __init__(self, spec: EncoderSpec = EncoderSpec()):
        super().__init__()
        self.spec = spec
        self.input_norm = nn.BatchNorm2d(1)
        widths = (1,) + spec.block_widths
        self.blocks = nn.Sequential(
            *[ResBlock(widths[i], widths[i + 1], spec.convs_per_block, spec.pool_kernels[i]) for i in range(3)]
        )

    def feature_map(self, x):
        return self.blocks(self.input_norm(x))

    def forward(self, x):
        return torch.amax(self.feature_map(x), dim=(2, 3))


class Projector(nn.Module):
    def __init__(self, in_dim, spec: ProjectorSpec = ProjectorSpec()):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, spec.hidden_dim), nn.ReLU(inplace=True), nn.Linear(spec.hidden_dim, spec.output_dim))

    def forward(self, e):
        return F.normalize(self.net(e), dim=1, eps=1e-12)


class FewShotNet(nn.Module):
    """Encoder ``f`` + projector ``h`` (+ optional linear head for the CE ablation)."""

    def __init__(self, encoder_spec=EncoderSpec(), projector_spec=ProjectorSpec(), n_classes=None):
        super().__init__()
        self.encoder_spec = encoder_spec
        self.projector_spec = projector_spec
        self.encoder = Encoder(encoder_spec)
        self.projector = Projector(encoder_spec.embedding_dim, projector_spec)
        self.head = nn.Linear(encoder_spec.embedding_dim, n_classes) if n_classes else None

    def encode(self, x):
        return self.encoder(as_input(x))

    def project(self, e):
        return self.projector(e)

    def forward(self, x):
        e = self.encode(x)
        return e, self.project(e)

    def drop_head(self):
        self.head = None
        return self


def as_input(patches) -> torch.Tensor:
    """``[n, mel, frames]`` array/tensor → float32 tensor ``[n, 1, mel, frames]``."""
    x = torch.as_tensor(np.asarray(patches) if not isinstance(patches, torch.Tensor) else patches, dtype=torch.float32)
    if x.dim() == 3:
        x = x.unsqueeze(1)
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected patches [n, mel, frames], got {tuple(x.shape)}")
    return x


@torch.no_grad()
def embed(model: FewShotNet, patches, space="encoder", batch_size=512) -> np.ndarray:
    """Eval-mode embeddings in encoder (default) or projector space."""
    was_training = model.training
    model.eval()
    out = []
    x = as_input(patches)
    for i in range(0, len(x), batch_size):
        e = model.encode(x[i : i + batch_size])
        out.append(model.project(e) if space == "projector" else e)
    model.train(was_training)
    return torch.cat(out).numpy() if out else np.zeros((0, model.encoder_spec.embedding_dim), np.float32)


def encode(model, patches) -> np.ndarray:
    return embed(model, patches, "encoder")


def project(model, embeddings) -> np.ndarray:
    with torch.no_grad():
        return model.project(torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)).numpy()


def save_checkpoint(model: FewShotNet, path, **provenance):
    """Write weights plus a config manifest; ``provenance`` values must be plain data."""
    state = {k: v for k, v in model.state_dict().items() if not k.startswith("head.")}
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_spec": asdict(model.encoder_spec),
        "projector_spec": asdict(model.projector_spec),
        "provenance": provenance,
        "state_dict": state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)
    return path


def load_checkpoint(path, expected: EncoderSpec | None = None):
    """Return ``(model, manifest)``; the model is in eval mode."""
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {blob.get('version')}, expected {CHECKPOINT_VERSION}")
    enc = EncoderSpec(**blob["encoder_spec"])
    if expected is not None and enc != expected:
        raise CheckpointError(
            f"{path}: encoder spec mismatch (checkpoint embedding_dim={enc.embedding_dim}, "
            f"expected {expected.embedding_dim}; checkpoint {enc}, expected {expected})"
        )
    model = FewShotNet(enc, ProjectorSpec(**blob["projector_spec"]))
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not match the stored spec: {exc}") from exc
    model.eval()
    manifest = {k: v for k, v in blob.items() if k != "state_dict"}
    return model, manifest
