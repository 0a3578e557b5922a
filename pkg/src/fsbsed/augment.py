"""Stochastic spectrogram transforms and the train / light augmentation policies.

All transforms work on log-mel matrices ``[mel_bins, frames]`` (or a
:class:`~fsbsed.audio.MelPatch`) and preserve shape.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .audio import MelPatch, resize_time
from .errors import ShapeError

TRANSFORM_ORDER = ("sm", "fs", "rrtc", "pg", "awgn")


def _values(p):
    return p.values if isinstance(p, MelPatch) else np.asarray(p)


def _like(p, values):
    return MelPatch(values, p.frame_hop_s) if isinstance(p, MelPatch) else values


def spectrogram_mixing(a, b, mix: float):
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise ShapeError(f"cannot mix patches of shape {va.shape} and {vb.shape}")
    if mix == 1.0:
        return _like(a, va.copy())
    if mix == 0.0:
        return _like(a, vb.copy())
    return _like(a, (mix * va + (1.0 - mix) * vb).astype(va.dtype))


def frequency_shift(p, bands: int):
    v = _values(p)
    bands = int(bands)
    if bands < 0 or bands > v.shape[0]:
        raise ValueError(f"bands must lie in [0, {v.shape[0]}]")
    if bands == 0:
        return _like(p, v.copy())
    out = np.full_like(v, v.min())
    out[bands:] = v[: v.shape[0] - bands]
    return _like(p, out)


def random_resized_time_crop(p, ratio: float, rng: np.random.Generator | None = None):
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    v = _values(p)
    frames = v.shape[1]
    length = max(1, math.ceil(ratio * frames - 1e-9))
    if length == frames:
        return _like(p, v.copy())
    rng = rng if rng is not None else np.random.default_rng()
    start = int(rng.integers(0, frames - length + 1))
    return _like(p, resize_time(v[:, start : start + length], frames))


def power_gain(p, factor: float):
    if not 0 < factor <= 1:
        raise ValueError("factor must lie in (0, 1]")
    v = _values(p)
    return _like(p, (v * factor).astype(v.dtype) if factor != 1.0 else v.copy())


def awgn(p, std: float, rng: np.random.Generator | None = None):
    if std < 0:
        raise ValueError("std must be >= 0")
    v = _values(p)
    if std == 0:
        return _like(p, v.copy())
    rng = rng if rng is not None else np.random.default_rng()
    return _like(p, (v + rng.normal(0.0, std, size=v.shape)).astype(v.dtype))


_PARAM_RE = re.compile(r"^\s*(uniform|randint|beta|fixed)\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class Param:
    """A sampled transform parameter, serialised as e.g. ``beta(5,2)``."""

    dist: str
    a: float
    b: float = 0.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.dist == "fixed":
            return self.a
        if self.dist == "uniform":
            return float(rng.uniform(self.a, self.b)) if self.a != self.b else self.a
        if self.dist == "randint":
            return int(rng.integers(int(self.a), int(self.b) + 1))
        if self.dist == "beta":
            return float(rng.beta(self.a, self.b))
        raise ValueError(f"unknown distribution {self.dist!r}")

    def __str__(self):
        if self.dist == "fixed":
            return f"fixed({self.a:g})"
        return f"{self.dist}({self.a:g},{self.b:g})"

    @classmethod
    def parse(cls, text: str) -> "Param":
        m = _PARAM_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse augmentation parameter {text!r}")
        args = [float(x) for x in m.group(2).split(",")]
        return cls(m.group(1), *args)


@dataclass(frozen=True)
class AugPolicy:
    transforms: tuple = field(default_factory=tuple)
    rng_seed: int = 0

    def __post_init__(self):
        names = [name for name, _ in self.transforms]
        unknown = set(names) - set(TRANSFORM_ORDER)
        if unknown:
            raise ValueError(f"unknown transforms {sorted(unknown)}")

    def get(self, name):
        for n, param in self.transforms:
            if n == name:
                return param
        return None

    def as_dict(self) -> dict:
        return {name: str(param) for name, param in self.transforms}

    @classmethod
    def from_dict(cls, d: dict, rng_seed: int = 0) -> "AugPolicy":
        items = [(k, Param.parse(d[k])) for k in TRANSFORM_ORDER if d.get(k) not in (None, "", "none")]
        return cls(tuple(items), rng_seed)


def train_policy(seed: int = 0) -> AugPolicy:
    return AugPolicy(
        (
            ("sm", Param("beta", 5, 2)),
            ("fs", Param("randint", 0, 10)),
            ("rrtc", Param("uniform", 0.6, 1.0)),
            ("pg", Param("uniform", 0.75, 1.0)),
            ("awgn", Param("uniform", 0.0, 0.1)),
        ),
        seed,
    )


def light_policy(seed: int = 0) -> AugPolicy:
    return AugPolicy((("rrtc", Param("uniform", 0.9, 1.0)), ("pg", Param("uniform", 0.9, 1.0))), seed)


def identity_policy(seed: int = 0) -> AugPolicy:
    return AugPolicy(
        (
            ("sm", Param("fixed", 1.0)),
            ("fs", Param("fixed", 0)),
            ("rrtc", Param("fixed", 1.0)),
            ("pg", Param("fixed", 1.0)),
            ("awgn", Param("fixed", 0.0)),
        ),
        seed,
    )


def apply_policy(p, policy: AugPolicy, rng: np.random.Generator | None = None, partner=None):
    """Apply the policy's transforms in SM, FS, RRTC, PG, AWGN order.

    Parameters are drawn fresh on every call, so two calls give two
    independent views. ``sm`` is skipped when no mixing ``partner`` is given.
    """
    rng = rng if rng is not None else np.random.default_rng(policy.rng_seed)
    out = p
    for name in TRANSFORM_ORDER:
        param = policy.get(name)
        if param is None:
            continue
        value = param.sample(rng)
        if name == "sm":
            if partner is not None:
                out = spectrogram_mixing(out, partner, value)
        elif name == "fs":
            out = frequency_shift(out, min(int(value), _values(out).shape[0]))
        elif name == "rrtc":
            out = random_resized_time_crop(out, value, rng)
        elif name == "pg":
            out = power_gain(out, value)
        else:
            out = awgn(out, value, rng)
    if out is p:
        out = _like(p, _values(p).copy())
    return out


def augment_batch(patches: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    """One augmented view of every patch in ``[n, mel, frames]``.

    Spectrogram-mixing partners are drawn uniformly from the same batch.
    """
    n = len(patches)
    partners = rng.integers(0, n, size=n) if policy.get("sm") is not None else None
    out = np.empty_like(patches)
    for i in range(n):
        partner = patches[partners[i]] if partners is not None else None
        out[i] = apply_policy(patches[i], policy, rng, partner=partner)
    return out
