"""DCASE-style annotation CSVs and the dataset manifest."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError

DATA_ROOT_ENV = "FSBSED_DATA_ROOT"
FIXED_COLUMNS = ("Audiofilename", "Starttime", "Endtime")


@dataclass(frozen=True)
class Annotation:
    start: float
    end: float
    label: str  # POS / NEG / UNK for target files, class name for source files


def read_target_annotations(path, audio_name: str | None = None) -> list[Annotation]:
    """Rows of a ``Audiofilename,Starttime,Endtime,Q`` file, sorted by onset."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if "Q" not in (reader.fieldnames or []):
            raise ManifestError(f"{path}: missing 'Q' column")
        for r in reader:
            if audio_name is not None and Path(r["Audiofilename"]).name != Path(audio_name).name:
                continue
            rows.append(Annotation(float(r["Starttime"]), float(r["Endtime"]), r["Q"].strip().upper()))
    return sorted(rows, key=lambda a: (a.start, a.end))


def read_source_annotations(path, default_label: str | None = None) -> list[Annotation]:
    """POS events of a multi-class training CSV (one POS/NEG/UNK column per class).

    A single ``Q`` column is accepted too; its POS rows get ``default_label``.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        classes = [c for c in (reader.fieldnames or []) if c not in FIXED_COLUMNS]
        for r in reader:
            for c in classes:
                if r[c].strip().upper() == "POS":
                    label = default_label if c == "Q" else c
                    if label is None:
                        raise ManifestError(f"{path}: 'Q' column needs a default class label")
                    out.append(Annotation(float(r["Starttime"]), float(r["Endtime"]), label))
    return sorted(out, key=lambda a: (a.start, a.end))


def write_target_annotations(path, audio_name, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*FIXED_COLUMNS, "Q"])
        for a in rows:
            w.writerow([audio_name, f"{a.start:.3f}", f"{a.end:.3f}", a.label])


def write_source_annotations(path, audio_name, rows, classes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*FIXED_COLUMNS, *classes])
        for a in rows:
            w.writerow([audio_name, f"{a.start:.3f}", f"{a.end:.3f}", *("POS" if c == a.label else "NEG" for c in classes)])


@dataclass(frozen=True)
class ManifestRow:
    dataset: str
    split: str
    audio: Path
    annotations: Path


def data_root(manifest_path) -> Path:
    env = os.environ.get(DATA_ROOT_ENV)
    return Path(env) if env else Path(manifest_path).resolve().parent


def read_manifest(path, check=True) -> list[ManifestRow]:
    """Rows of ``dataset,split,audio,annotations``; relative paths resolve against the data root."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist", [str(path)])
    root = data_root(path)
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            split = r["split"].strip()
            if split not in ("train", "validation"):
                raise ManifestError(f"{path}: unknown split {split!r}")
            rows.append(ManifestRow(r["dataset"].strip(), split, root / r["audio"].strip(), root / r["annotations"].strip()))
    splits = {}
    for row in rows:
        if splits.setdefault(row.dataset, row.split) != row.split:
            raise ManifestError(f"{path}: dataset {row.dataset!r} listed under both splits")
    if check:
        missing = [str(p) for row in rows for p in (row.audio, row.annotations) if not p.exists()]
        if missing:
            raise ManifestError(f"{len(missing)} manifest file(s) missing: " + ", ".join(missing), missing)
    return rows


def write_manifest(path, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "split", "audio", "annotations"])
        for row in rows:
            w.writerow([row.dataset, row.split, str(row.audio), str(row.annotations)])
