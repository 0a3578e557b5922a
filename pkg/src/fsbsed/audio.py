"""Audio loading, log-mel spectrograms and fixed-size patch extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import EmptyInputError, ShapeError

PATCH_FRAMES = 17


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if np.ndim(self.samples) != 1:
            raise ShapeError("waveform must be mono (1-D)")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    fft_size: int = 1024
    hop: int = 256
    mel_bins: int = 128
    fmin: float = 50.0
    fmax: float = 11025.0
    log_floor: float = 1e-10
    patch_frames: int = PATCH_FRAMES

    def __post_init__(self):
        if not 0 < self.hop <= self.fft_size:
            raise ValueError("need 0 < hop <= fft_size")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need fmin < fmax <= sample_rate/2")
        if self.mel_bins < 1 or self.log_floor <= 0 or self.patch_frames < 1:
            raise ValueError("mel_bins, patch_frames >= 1 and log_floor > 0 required")

    @property
    def frame_hop_s(self) -> float:
        return self.hop / self.sample_rate


@dataclass
class MelPatch:
    """Log-mel matrix ``[mel_bins, frames]``; also used for whole-file spectrograms."""

    values: np.ndarray
    frame_hop_s: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames * self.frame_hop_s


def load_audio(path, target_rate: int) -> Waveform:
    """Read a PCM WAV file, downmix to mono and resample to ``target_rate``."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read audio file {path}: {exc}") from exc
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    elif data.dtype.kind == "u":
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + 1) / 2) / ((info.max + 1) / 2)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise EmptyInputError(f"{path} contains no samples")
    if rate != target_rate:
        ratio = Fraction(target_rate, rate)
        data = resample_poly(data, ratio.numerator, ratio.denominator)
    return Waveform(np.ascontiguousarray(data), int(target_rate))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(cfg: FeatureConfig) -> np.ndarray:
    """Centre frequency (Hz) of every triangular mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """HTK-scale triangular filters with unit peak, shape ``[mel_bins, fft_size//2+1]``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def mel_spectrogram(w: Waveform, cfg: FeatureConfig) -> MelPatch:
    """Full-file log-mel spectrogram without centre padding.

    Frame ``k`` starts at sample ``k * hop``; the matrix has
    ``(len - fft_size) // hop + 1`` columns.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    if len(x) < cfg.fft_size:
        raise ShapeError(f"need at least {cfg.fft_size} samples, got {len(x)}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)[:: cfg.hop]
    window = np.hanning(cfg.fft_size + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    mel = mel_filterbank(cfg) @ power.T
    return MelPatch(np.log(mel + cfg.log_floor).astype(np.float32), cfg.frame_hop_s)


def resize_time(values: np.ndarray, n_frames: int) -> np.ndarray:
    """Linear interpolation along the last axis, endpoints mapped to endpoints."""
    src = values.shape[-1]
    if src == n_frames:
        return values.copy()
    if src == 1:
        return np.repeat(values, n_frames, axis=-1)
    pos = np.linspace(0.0, src - 1, n_frames)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(values.dtype)
    return values[..., lo] * (1 - frac) + values[..., hi] * frac


def fit_frames(values: np.ndarray, target_frames: int) -> np.ndarray:
    """Tile short segments, linearly resize long ones, to exactly ``target_frames``."""
    n = values.shape[-1]
    if n == target_frames:
        return values.copy()
    if n < target_frames:
        reps = math.ceil(target_frames / n)
        return np.tile(values, (1, reps))[:, :target_frames]
    return resize_time(values, target_frames)


def frame_range(start_s: float, end_s: float, frame_hop_s: float, n_frames: int) -> tuple[int, int]:
    """Frame indices ``[i0, i1)`` covering an interval; at least one frame."""
    i0 = int(math.floor(start_s / frame_hop_s + 1e-9))
    i0 = min(max(i0, 0), n_frames - 1)
    length = max(1, int(round((end_s - start_s) / frame_hop_s)))
    return i0, min(i0 + length, n_frames)


def slice_patch(spec: MelPatch, start_s: float, end_s: float, target_frames: int = PATCH_FRAMES) -> MelPatch:
    if not start_s < end_s:
        raise ValueError(f"inverted interval [{start_s}, {end_s}]")
    if start_s < 0:
        raise ValueError("start_s must be >= 0")
    i0, i1 = frame_range(start_s, end_s, spec.frame_hop_s, spec.n_frames)
    return MelPatch(fit_frames(spec.values[:, i0:i1], target_frames), spec.frame_hop_s)


def centered_patch(spec: MelPatch, start_s: float, end_s: float, target_frames: int = PATCH_FRAMES) -> MelPatch:
    """Fixed-length crop centred on an event; events shorter than the crop are tiled."""
    i0, i1 = frame_range(start_s, end_s, spec.frame_hop_s, spec.n_frames)
    if i1 - i0 <= target_frames:
        return MelPatch(fit_frames(spec.values[:, i0:i1], target_frames), spec.frame_hop_s)
    mid = (i0 + i1) // 2
    lo = min(max(mid - target_frames // 2, 0), spec.n_frames - target_frames)
    return MelPatch(spec.values[:, lo : lo + target_frames].copy(), spec.frame_hop_s)
