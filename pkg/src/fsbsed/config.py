"""Run configuration: every stage's settings in one INI-style file.

Sections mirror the pipeline stages::

    [run]       manifest, output_dir, seeds, workers
    [features]  FeatureConfig fields
    [augment]   train policy (sm, fs, rrtc, pg, awgn) and light policy (light_rrtc, light_pg)
    [backbone]  block_widths, convs_per_block, pool_kernels, projector_hidden, projector_dim
    [losses]    pretrain_loss, finetune_loss, temperature, tcr_eps2, tcr_lambda, anchor_reduction
    [train]     batch_size, lr, momentum, weight_decay, epochs, schedule, seed
    [adapt]     epochs, lr, momentum, weight_decay, freeze_norm_stats, seed
    [episode]   n_shots, neg_per_pos, min_window_s, max_window_s, seed
    [detect]    views, embedding_space, min_dur_frac, merge_gap_s, median_filter, timestamp, seed
    [evaluate]  iou_min
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .audio import FeatureConfig
from .augment import AugPolicy, light_policy, train_policy
from .backbone import EncoderSpec, ProjectorSpec
from .detection import DetectConfig
from .evaluation import DEFAULT_IOU
from .fewshot import AdaptConfig, EpisodeConfig
from .pretrain import TrainConfig

FINETUNE_CHOICES = ("none", "scl", "proto_orig", "proto_mod")


@dataclass(frozen=True)
class RunConfig:
    manifest: str = "manifest.csv"
    output_dir: str = "runs"
    seeds: tuple = (0,)
    workers: int = 1
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train_policy: AugPolicy = field(default_factory=train_policy)
    light_policy: AugPolicy = field(default_factory=light_policy)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    projector: ProjectorSpec = field(default_factory=ProjectorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune_loss: str = "none"
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    iou_min: float = DEFAULT_IOU

    def __post_init__(self):
        if self.finetune_loss not in FINETUNE_CHOICES:
            raise ValueError(f"finetune_loss must be one of {FINETUNE_CHOICES}")

    @property
    def finetune_enabled(self) -> bool:
        return self.finetune_loss != "none"

    def adapt_config(self) -> AdaptConfig:
        loss = self.finetune_loss if self.finetune_enabled else self.adapt.loss
        return replace(self.adapt, loss=loss, temperature=self.train.temperature)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse(text: str, current):
    text = text.strip()
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float) or current is None:
        return None if text.lower() == "none" else float(text)
    return text


def _section(obj, skip=()):
    return {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip}


def _update(obj, values: dict, skip=()):
    changes = {}
    names = {f.name for f in fields(obj)}
    for k, v in values.items():
        if k in skip:
            continue
        if k not in names:
            raise KeyError(f"unknown key {k!r} for {type(obj).__name__}")
        changes[k] = _parse(v, getattr(obj, k))
    return replace(obj, **changes) if changes else obj


def _pools(text):
    return tuple(tuple(int(x) for x in p.split("x")) for p in text.split(","))


def to_sections(cfg: RunConfig) -> dict:
    loss_keys = ("loss", "temperature", "tcr_eps2", "tcr_lambda", "anchor_reduction")
    light = cfg.light_policy.as_dict()
    return {
        "run": {
            "manifest": cfg.manifest,
            "output_dir": cfg.output_dir,
            "seeds": ",".join(str(s) for s in cfg.seeds),
            "workers": str(cfg.workers),
        },
        "features": _section(cfg.features),
        "augment": {
            **{k: cfg.train_policy.as_dict().get(k, "none") for k in ("sm", "fs", "rrtc", "pg", "awgn")},
            "light_rrtc": light.get("rrtc", "none"),
            "light_pg": light.get("pg", "none"),
        },
        "backbone": {
            "block_widths": _fmt(cfg.encoder.block_widths),
            "convs_per_block": str(cfg.encoder.convs_per_block),
            "pool_kernels": ",".join(f"{f}x{t}" for f, t in cfg.encoder.pool_kernels),
            "projector_hidden": str(cfg.projector.hidden_dim),
            "projector_dim": str(cfg.projector.output_dim),
        },
        "losses": {
            "pretrain_loss": cfg.train.loss,
            "finetune_loss": cfg.finetune_loss,
            "temperature": _fmt(cfg.train.temperature),
            "tcr_eps2": _fmt(cfg.train.tcr_eps2),
            "tcr_lambda": _fmt(cfg.train.tcr_lambda),
            "anchor_reduction": cfg.train.anchor_reduction,
        },
        "train": _section(cfg.train, skip=loss_keys),
        "adapt": _section(cfg.adapt, skip=("loss", "temperature")),
        "episode": _section(cfg.episode),
        "detect": _section(cfg.detect),
        "evaluate": {"iou_min": _fmt(cfg.iou_min)},
    }


def from_sections(sections: dict, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    s = {k: dict(v) for k, v in sections.items()}
    run = s.get("run", {})
    top = {}
    if "manifest" in run:
        top["manifest"] = run["manifest"]
    if "output_dir" in run:
        top["output_dir"] = run["output_dir"]
    if "seeds" in run:
        top["seeds"] = tuple(int(x) for x in run["seeds"].split(",") if x.strip())
    if "workers" in run:
        top["workers"] = int(run["workers"])
    features = _update(cfg.features, s.get("features", {}))
    aug = s.get("augment", {})
    train_pol = cfg.train_policy
    if any(k in aug for k in ("sm", "fs", "rrtc", "pg", "awgn")):
        merged = {**train_pol.as_dict(), **{k: aug[k] for k in ("sm", "fs", "rrtc", "pg", "awgn") if k in aug}}
        train_pol = AugPolicy.from_dict(merged, train_pol.rng_seed)
    light_pol = cfg.light_policy
    if "light_rrtc" in aug or "light_pg" in aug:
        merged = {**light_pol.as_dict()}
        for k in ("rrtc", "pg"):
            if f"light_{k}" in aug:
                merged[k] = aug[f"light_{k}"]
        light_pol = AugPolicy.from_dict(merged, light_pol.rng_seed)
    bb = s.get("backbone", {})
    encoder = EncoderSpec(
        tuple(int(x) for x in bb["block_widths"].split(",")) if "block_widths" in bb else cfg.encoder.block_widths,
        int(bb.get("convs_per_block", cfg.encoder.convs_per_block)),
        _pools(bb["pool_kernels"]) if "pool_kernels" in bb else cfg.encoder.pool_kernels,
    )
    projector = ProjectorSpec(int(bb.get("projector_hidden", cfg.projector.hidden_dim)),
                              int(bb.get("projector_dim", cfg.projector.output_dim)))
    losses = s.get("losses", {})
    train_vals = dict(s.get("train", {}))
    for key, target in (("pretrain_loss", "loss"), ("temperature", "temperature"), ("tcr_eps2", "tcr_eps2"),
                        ("tcr_lambda", "tcr_lambda"), ("anchor_reduction", "anchor_reduction")):
        if key in losses:
            train_vals[target] = losses[key]
    train = _update(cfg.train, train_vals)
    return replace(
        cfg,
        **top,
        features=features,
        train_policy=train_pol,
        light_policy=light_pol,
        encoder=encoder,
        projector=projector,
        train=train,
        finetune_loss=losses.get("finetune_loss", cfg.finetune_loss),
        adapt=_update(cfg.adapt, s.get("adapt", {})),
        episode=_update(cfg.episode, s.get("episode", {})),
        detect=_update(cfg.detect, s.get("detect", {})),
        iou_min=float(s.get("evaluate", {}).get("iou_min", cfg.iou_min)),
    )


def load_config(path=None, overrides=()) -> RunConfig:
    """Read an INI file (optional) then apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        parser.read(path)
    sections = {name: dict(parser[name]) for name in parser.sections()}
    for item in overrides:
        key, _, value = item.partition("=")
        section, _, name = key.strip().partition(".")
        if not name or not _:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        sections.setdefault(section, {})[name] = value.strip()
    return from_sections(sections)


def save_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    for name, values in to_sections(cfg).items():
        parser[name] = values
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
    return path


def config_dict(cfg: RunConfig) -> dict:
    """Plain nested dict (for checkpoint provenance)."""
    return to_sections(cfg)
