import hashlib

import numpy as np
import pytest
from scipy.io import wavfile
from scipy.signal import stft

from fsbsed import synth
from fsbsed.data import read_manifest, read_source_annotations, read_target_annotations


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return synth.make_corpus(out, seed=0)


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_same_seed_is_byte_identical(tmp_path):
    a = synth.make_corpus(tmp_path / "a", seed=3, n_source_events=5, n_val_files=1, n_val_events=8)
    b = synth.make_corpus(tmp_path / "b", seed=3, n_source_events=5, n_val_files=1, n_val_events=8)
    c = synth.make_corpus(tmp_path / "c", seed=4, n_source_events=5, n_val_files=1, n_val_events=8)
    assert digest(a.parent) == digest(b.parent) != digest(c.parent)


def test_manifest_layout(corpus):
    rows = read_manifest(corpus)
    assert {r.split for r in rows if r.dataset == "SRC"} == {"train"}
    assert {r.split for r in rows if r.dataset == "VAL"} == {"validation"}
    assert sum(r.split == "train" for r in rows) == len(synth.SOURCE_SPECIES)


def test_target_class_absent_from_training(corpus):
    labels = set()
    for r in read_manifest(corpus):
        if r.split == "train":
            labels |= {a.label for a in read_source_annotations(r.annotations)}
    assert labels == set(synth.SOURCE_SPECIES)
    assert synth.TARGET_SPECIES not in labels


def band_db(x, sr, band, start, end):
    f, t, z = stft(x, sr, nperseg=512)
    rows = (f >= band[0]) & (f <= band[1])
    cols = (t >= start) & (t <= end)
    return 10 * np.log10((np.abs(z[np.ix_(rows, cols)]) ** 2).mean() + 1e-20)


def test_every_annotation_stands_out_in_its_band(corpus):
    for r in read_manifest(corpus):
        sr, x = wavfile.read(r.audio)
        x = x / 32768.0
        if r.split == "train":
            ann = read_source_annotations(r.annotations)
        else:
            ann = read_target_annotations(r.annotations)
        band = synth.BANDS[ann[0].label if r.split == "train" else synth.TARGET_SPECIES]
        floor = band_db(x, sr, band, 0.0, ann[0].start - 0.05)
        for a in ann:
            inner = (a.start + 0.03, a.end - 0.03)
            assert band_db(x, sr, band, *inner) - floor >= 6.0, (r.audio.name, a)


def test_validation_has_enough_shots_and_queries(corpus):
    for r in read_manifest(corpus):
        if r.split == "validation":
            ann = read_target_annotations(r.annotations)
            assert len(ann) == 20 and all(a.label == "POS" for a in ann)


def test_calls_are_unit_peak_and_unknown_species_rejected(rng):
    for sp in synth.SOURCE_SPECIES + (synth.TARGET_SPECIES,):
        c = synth.call(sp, 0.2, rng)
        assert len(c) == round(0.2 * synth.SAMPLE_RATE)
        assert 0.5 < np.abs(c).max() <= 1.0 + 1e-9
    with pytest.raises(ValueError):
        synth.call("owl", 0.2, rng)


def test_source_clips_are_seeded():
    a = synth.source_clips(1, 3)
    b = synth.source_clips(1, 3)
    assert [sp for sp, _, _ in a] == list(synth.SOURCE_SPECIES)
    assert all(np.array_equal(x, y) for (_, x, _), (_, y, _) in zip(a, b))
