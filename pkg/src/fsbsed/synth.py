"""Seeded synthetic bioacoustic corpus: chirp "species" over coloured noise.

Five source species train the encoder; the validation files hold a sixth
call type that never appears in training.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

from .data import Annotation, ManifestRow, write_manifest, write_source_annotations, write_target_annotations

SAMPLE_RATE = 22050
SOURCE_SPECIES = ("upsweep", "downsweep", "pulsetrain", "warble", "harmonic")
TARGET_SPECIES = "trill"

# Frequency band (Hz) that carries each call's energy.
BANDS = {
    "upsweep": (1800.0, 4400.0),
    "downsweep": (3200.0, 6600.0),
    "pulsetrain": (1000.0, 1400.0),
    "warble": (4400.0, 5600.0),
    "harmonic": (600.0, 3000.0),
    "trill": (7200.0, 9900.0),
}


def _sweep(t, f0, f1):
    dur = t[-1] if len(t) > 1 else 1.0
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / dur * t**2)
    return np.sin(phase)


def call(species: str, duration: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """One call of ``species``, unit peak amplitude, with 10 ms fades."""
    t = np.arange(int(round(duration * sr))) / sr
    j = rng.uniform(0.95, 1.05)
    if species == "upsweep":
        x = _sweep(t, 2000 * j, 4000 * j)
    elif species == "downsweep":
        x = _sweep(t, 6000 * j, 3600 * j)
    elif species == "pulsetrain":
        x = np.sin(2 * np.pi * 1200 * j * t) * ((t % 0.06) < 0.025)
    elif species == "warble":
        x = np.sin(2 * np.pi * 5000 * j * t + (400 / 30) * np.sin(2 * np.pi * 30 * t))
    elif species == "harmonic":
        f0 = 700 * j
        x = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 5)) / 2.1
    elif species == "trill":
        x = _sweep(t, 9500 * j, 7600 * j) * (0.6 + 0.4 * np.sin(2 * np.pi * 15 * t))
    else:
        raise ValueError(f"unknown species {species!r}")
    fade = min(len(t) // 2, int(0.01 * sr))
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    return x


def background(n: int, rng: np.random.Generator, level: float = 0.01, red_mix: float = 0.3) -> np.ndarray:
    """White plus low-passed (reddish) noise."""
    white = rng.normal(0.0, 1.0, n)
    red = lfilter([1.0], [1.0, -0.95], rng.normal(0.0, 1.0, n)) * red_mix
    return level * (white + red)


def render(species: str, n_events: int, rng: np.random.Generator, dur_range=(0.15, 0.4),
           gap_range=(0.2, 0.6), lead=0.5, tail=2.0, noise=(0.01, 0.3), sr: int = SAMPLE_RATE):
    """Audio with ``n_events`` calls laid out left to right; returns ``(samples, events)``."""
    events, t = [], lead
    for _ in range(n_events):
        d = rng.uniform(*dur_range)
        events.append((t, t + d))
        t += d + rng.uniform(*gap_range)
    total = events[-1][1] + tail
    x = background(int(round(total * sr)), rng, *noise)
    for on, off in events:
        c = call(species, off - on, rng, sr) * rng.uniform(0.3, 0.5)
        i = int(round(on * sr))
        x[i : i + len(c)] += c
    return x, [(round(on, 3), round(off, 3)) for on, off in events]


def add_distractors(x, events, n, rng: np.random.Generator, sr: int = SAMPLE_RATE):
    """Overlay ``n`` unannotated source-species calls inside gaps between events."""
    gaps = [(a[1] + 0.15, b[0] - 0.15) for a, b in zip(events, events[1:]) if b[0] - a[1] > 0.6]
    placed = []
    for g in rng.choice(len(gaps), size=min(n, len(gaps)), replace=False):
        lo, hi = gaps[g]
        d = min(rng.uniform(0.15, 0.3), hi - lo)
        on = rng.uniform(lo, hi - d)
        c = call(rng.choice(SOURCE_SPECIES), d, rng, sr) * rng.uniform(0.3, 0.5)
        i = int(round(on * sr))
        x[i : i + len(c)] += c
        placed.append((on, on + d))
    return sorted(placed)


def _write_wav(path, x, sr):
    wavfile.write(str(path), sr, np.clip(x * 32767.0, -32768, 32767).astype(np.int16))


def make_corpus(out_dir, seed: int = 0, n_source_events: int = 40, n_val_files: int = 2, n_val_events: int = 20,
                n_distractors: int = 6, val_noise=(0.03, 1.0)):
    """Write the corpus and ``manifest.csv`` under ``out_dir``; returns the manifest path.

    Validation files are recorded in a noisier, redder background than the
    training files and contain unannotated source-species calls.
    """
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "validation").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for sp in SOURCE_SPECIES:
        x, events = render(sp, n_source_events, rng)
        wav, ann = f"train/{sp}.wav", f"train/{sp}.csv"
        _write_wav(out / wav, x, SAMPLE_RATE)
        write_source_annotations(out / ann, f"{sp}.wav", [Annotation(on, off, sp) for on, off in events], SOURCE_SPECIES)
        rows.append(ManifestRow("SRC", "train", wav, ann))
    for k in range(n_val_files):
        x, events = render(TARGET_SPECIES, n_val_events, rng, dur_range=(0.2, 0.4), gap_range=(0.6, 1.5),
                           noise=val_noise)
        add_distractors(x, events, n_distractors, rng)
        name = f"val_{k:02d}"
        wav, ann = f"validation/{name}.wav", f"validation/{name}.csv"
        _write_wav(out / wav, x, SAMPLE_RATE)
        write_target_annotations(out / ann, f"{name}.wav", [Annotation(on, off, "POS") for on, off in events])
        rows.append(ManifestRow("VAL", "validation", wav, ann))
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


def source_clips(seed: int, n_events: int = 20):
    """In-memory source-species recordings, e.g. for held-out diagnostics.

    Returns a list of ``(species, samples, events)``.
    """
    rng = np.random.default_rng(seed)
    return [(sp, *render(sp, n_events, rng)) for sp in SOURCE_SPECIES]
