"""Event-based precision / recall / F1 with one-to-one IoU matching."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Annotation

DEFAULT_IOU = 0.3


def iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def match_pairs(pred, ref, iou_min=DEFAULT_IOU):
    """One-to-one (pred_index, ref_index) matches.

    Among matchings of maximum size the one with the largest summed IoU is
    returned; pairs below ``iou_min`` are never matched.
    """
    if not pred or not ref:
        return []
    scores = np.array([[iou(p, r) for r in ref] for p in pred])
    eligible = scores >= iou_min
    if not eligible.any():
        return []
    # Each match is worth more than any IoU total, so cardinality wins first.
    weight = np.where(eligible, (min(len(pred), len(ref)) + 1) + scores, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if eligible[i, j]]


def match_events(pred, ref, iou_min=DEFAULT_IOU):
    """``(TP, FP, FN)`` for one file."""
    tp = len(match_pairs(pred, ref, iou_min))
    return tp, len(pred) - tp, len(ref) - tp


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def evaluation_references(annotations: list[Annotation], n_shots=5):
    """Scored POS events (those after the shots) and UNK intervals."""
    pos = sorted((a.start, a.end) for a in annotations if a.label == "POS")
    unk = sorted((a.start, a.end) for a in annotations if a.label == "UNK")
    return pos[n_shots:], unk


def evaluate_file(pred, annotations: list[Annotation], iou_min=DEFAULT_IOU, n_shots=5) -> Counts:
    """Counts for one file; unmatched predictions that hit an UNK region are ignored."""
    ref, unk = evaluation_references(annotations, n_shots)
    pred = sorted(pred)
    matched = {i for i, _ in match_pairs(pred, ref, iou_min)}
    leftover = [p for i, p in enumerate(pred) if i not in matched]
    ignored = {i for i, _ in match_pairs(leftover, unk, iou_min)}
    tp = len(matched)
    return Counts(tp, len(leftover) - len(ignored), len(ref) - tp)


@dataclass
class EvalReport:
    per_file: dict = field(default_factory=dict)  # name -> Counts
    file_dataset: dict = field(default_factory=dict)  # name -> dataset

    def add(self, name, dataset, counts: Counts):
        self.per_file[name] = counts
        self.file_dataset[name] = dataset

    def per_dataset(self) -> dict:
        out = {}
        for name, c in self.per_file.items():
            ds = self.file_dataset[name]
            out[ds] = out.get(ds, Counts()) + c
        return dict(sorted(out.items()))

    def pooled(self) -> Counts:
        return sum(self.per_file.values(), Counts())

    def metrics(self) -> dict:
        """``{'overall': (P, R, F1), dataset: (P, R, F1), ...}`` on event-pooled counts."""
        out = {"overall": prf(**vars(self.pooled()))}
        for ds, c in self.per_dataset().items():
            out[ds] = prf(**vars(c))
        return out


def aggregate_runs(reports: list[EvalReport]) -> dict:
    """Mean and unbiased std of every (scope, metric) over runs."""
    if not reports:
        raise ValueError("need at least one report")
    per_run = [r.metrics() for r in reports]
    out = {}
    for scope in per_run[0]:
        for k, metric in enumerate(("precision", "recall", "f1")):
            vals = np.array([m[scope][k] for m in per_run if scope in m])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[(scope, metric)] = (float(vals.mean()), std)
    return out


def format_mean_std(mean, std, percent=True):
    scale = 100.0 if percent else 1.0
    return f"{mean * scale:.2f} ± {std * scale:.2f}"


def format_table(agg: dict) -> str:
    scopes = list(dict.fromkeys(s for s, _ in agg))
    lines = [f"{'scope':<12}{'Precision':>18}{'Recall':>18}{'F1-score':>18}"]
    for s in scopes:
        cells = [format_mean_std(*agg[(s, m)]) for m in ("precision", "recall", "f1")]
        lines.append(f"{s:<12}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


def write_report_csv(path, reports: list[EvalReport]):
    """Per-run per-scope counts and metrics followed by mean/std rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "scope", "tp", "fp", "fn", "precision", "recall", "f1"])
        for k, rep in enumerate(reports):
            scopes = {"overall": rep.pooled(), **rep.per_dataset()}
            for scope, c in scopes.items():
                p, r, f = prf(**vars(c))
                w.writerow([k, scope, c.tp, c.fp, c.fn, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
        agg = aggregate_runs(reports)
        scopes = list(dict.fromkeys(s for s, _ in agg))
        for stat, idx in (("mean", 0), ("std", 1)):
            for s in scopes:
                w.writerow([stat, s, "", "", ""] + [f"{agg[(s, m)][idx]:.6f}" for m in ("precision", "recall", "f1")])
