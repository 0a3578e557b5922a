"""
From five shots to onsets and offsets
=====================================

Builds a few-shot episode from an annotation list, then turns a made-up
sequence of per-window decisions into events and scores them.
"""
import numpy as np

from fsbsed.data import Annotation
from fsbsed.detection import labels_to_events, post_process
from fsbsed.evaluation import evaluate_file, prf
from fsbsed.fewshot import build_episode

# Five annotated calls of roughly 0.3 s, then more calls the model must find.
calls = [(1.0, 1.3), (2.1, 2.4), (3.0, 3.35), (4.2, 4.45), (5.0, 5.3), (7.0, 7.3), (8.5, 8.8), (11.0, 11.4)]
annotations = [Annotation(s, e, "POS") for s, e in calls]
episode = build_episode(annotations, duration=13.0)

print(f"window {episode.window_len_s:.3f}s, hop {episode.hop_s:.3f}s")
print(f"support ends at {episode.support_end}s, {len(episode.query_starts)} query windows")
print("negatives:", [(round(s, 2), round(e, 2)) for s, e in episode.neg_segments[:4]], "...")

# Pretend the classifier said "positive" wherever a window centre falls in
# a true call, plus one stray window at 10 s.
centres = episode.query_starts + episode.window_len_s / 2
labels = np.array([any(s <= c < e for s, e in calls[5:]) for c in centres])
labels[np.argmin(np.abs(centres - 10.0))] = True

half = episode.window_len_s / 2
raw = labels_to_events(labels, centres, half)
print("raw events:", [(round(a, 2), round(b, 2)) for a, b in raw])

# Post-processing drops events shorter than 60% of a typical shot.
events = post_process(raw, 0.6 * episode.mean_shot_duration, episode.hop_s)
print("kept events:", [(round(a, 2), round(b, 2)) for a, b in events])

counts = evaluate_file(events, annotations)
p, r, f = prf(counts.tp, counts.fp, counts.fn)
print(f"TP {counts.tp}  FP {counts.fp}  FN {counts.fn}  ->  P {p:.2f}  R {r:.2f}  F1 {f:.2f}")
