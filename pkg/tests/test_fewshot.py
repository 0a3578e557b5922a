import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fsbsed.audio import MelPatch
from fsbsed.augment import AugPolicy, augment_batch, identity_policy, train_policy
from fsbsed.backbone import EncoderSpec, FewShotNet, embed
from fsbsed.data import Annotation
from fsbsed.errors import ProtocolError
from fsbsed.fewshot import (
    AdaptConfig,
    EpisodeConfig,
    Prototypes,
    balanced_support,
    build_episode,
    classify_queries,
    classify_query,
    compute_prototypes,
    finetune,
    multiview_embed,
    query_patches,
    support_loss,
    support_patches,
)

SMALL = EncoderSpec((8, 16, 32))


def pos(*spans):
    return [Annotation(s, e, "POS") for s, e in spans]


def five_shots(width=0.2, gap=1.0):
    return pos(*[(1.0 + k * gap, 1.0 + k * gap + width) for k in range(5)])


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return FewShotNet(SMALL).eval()


# --- episodes ------------------------------------------------------------

def test_defaults_follow_protocol():
    cfg = AdaptConfig()
    assert (cfg.epochs, cfg.lr, cfg.loss) == (40, 0.01, "proto_mod")
    assert EpisodeConfig().n_shots == 5


def test_nineteen_query_windows():
    shots = pos(*[(k, k + 1.0) for k in (0.5, 2.0, 3.5, 5.0, 6.5)])
    ep = build_episode(shots, 7.5 + 10.0)
    assert ep.window_len_s == 1.0 and ep.hop_s == 0.5
    assert len(ep.query_starts) == (10 - 1) // 0.5 + 1 == 19


def test_queries_start_after_fifth_shot_and_ignore_later_events():
    ann = five_shots() + pos((20.0, 20.3), (25.0, 25.1))
    ep = build_episode(ann, 30.0)
    t5 = 5.2
    assert ep.support_end == pytest.approx(t5)
    assert ep.query_starts.min() >= t5 - 1e-12
    assert max(e for _, e in ep.pos_segments + ep.neg_segments) <= ep.query_starts.min() + 1e-12
    assert np.allclose(np.diff(ep.query_starts), ep.hop_s)


def test_negatives_avoid_shots_and_unk():
    ann = five_shots() + [Annotation(2.4, 2.9, "UNK")]
    ep = build_episode(ann, 20.0)
    assert 0 < len(ep.neg_segments) <= 25
    for s, e in ep.neg_segments:
        assert 0 <= s < e <= ep.support_end + 1e-9
        for a, b in ep.pos_segments + [(2.4, 2.9)]:
            assert e <= a + 1e-9 or s >= b - 1e-9


def test_window_clipping():
    assert build_episode(five_shots(width=0.02), 20).window_len_s == 0.1
    assert build_episode(five_shots(width=2.0, gap=3.0), 40).window_len_s == 1.0


def test_protocol_errors():
    with pytest.raises(ProtocolError, match="5 POS"):
        build_episode(pos((0, 1), (2, 3)), 10)
    back_to_back = pos(*[(k * 0.2, (k + 1) * 0.2) for k in range(5)])
    with pytest.raises(ProtocolError, match="negatives"):
        build_episode(back_to_back, 10)
    with pytest.raises(ProtocolError):
        build_episode(five_shots(), 5.25)


def test_episode_is_seeded():
    a = build_episode(five_shots(), 20, EpisodeConfig(seed=1))
    b = build_episode(five_shots(), 20, EpisodeConfig(seed=1))
    assert a.neg_segments == b.neg_segments


def test_support_and_query_patches():
    spec = MelPatch(np.random.default_rng(0).normal(size=(32, 1000)).astype(np.float32), 256 / 22050)
    ep = build_episode(five_shots(), 11.0)
    x, y = support_patches(spec, ep, 17)
    assert x.shape == (len(y), 32, 17) and y[:5].tolist() == [1] * 5 and not y[5:].any()
    assert query_patches(spec, ep, 17).shape == (len(ep.query_starts), 32, 17)


# --- prototypes and classification --------------------------------------

def test_prototype_examples():
    p = compute_prototypes([[1, 0], [0, 1], [3, 3]], [1, 1, 0])
    assert np.allclose(p.pos, [0.5, 0.5]) and np.allclose(p.neg, [3, 3])
    with pytest.raises(ProtocolError):
        compute_prototypes([[1, 0]], [1])


def test_prototypes_match_oracle_and_are_permutation_invariant(rng):
    e = rng.normal(size=(12, 6))
    y = np.array([1] * 5 + [0] * 7)
    p = compute_prototypes(e, y)
    ref = oracles.prototypes(e, y)
    assert np.allclose(p.pos, ref[1], atol=1e-7) and np.allclose(p.neg, ref[0], atol=1e-7)
    perm = rng.permutation(12)
    q = compute_prototypes(e[perm], y[perm])
    assert np.allclose(p.pos, q.pos) and np.allclose(p.neg, q.neg)
    d = compute_prototypes(np.concatenate([e, e]), np.concatenate([y, y]))
    assert np.allclose(p.pos, d.pos) and np.allclose(p.neg, d.neg)


def test_classify_examples():
    p = Prototypes(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert classify_query(p.pos, p) == "pos"
    assert classify_query([0.0, 5.0], p) == "neg"
    assert classify_query([0.1, 0.0], p.swapped()) == "neg"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_classify_matches_two_distance_oracle_and_translation(seed):
    rng = np.random.default_rng(seed)
    q, a, b, shift = rng.normal(size=(4, 5))
    p = Prototypes(a, b)
    expect = "pos" if np.linalg.norm(q - a) < np.linalg.norm(q - b) else "neg"
    assert classify_query(q, p) == expect
    assert classify_query(q + shift, Prototypes(a + shift, b + shift)) == expect


def test_classify_queries_vectorised(rng):
    q = rng.normal(size=(20, 4))
    p = Prototypes(*rng.normal(size=(2, 4)))
    assert classify_queries(q, p).tolist() == [classify_query(v, p) == "pos" for v in q]


# --- multi-view embedding ------------------------------------------------

def test_multiview_identity_equals_encoder(net, rng):
    x = rng.normal(size=(3, 32, 17)).astype(np.float32)
    plain = embed(net, x)
    assert np.allclose(multiview_embed(x, net, 1, identity_policy()), plain, atol=1e-6)
    assert np.allclose(multiview_embed(x, net, 6, identity_policy()), plain, atol=1e-6)
    assert np.allclose(multiview_embed(x[0], net, 2, identity_policy()), plain[0], atol=1e-6)


def test_multiview_norm_bound(net, rng):
    x = rng.normal(size=(1, 32, 17)).astype(np.float32)
    views = AugPolicy(train_policy().transforms[1:])
    r1 = np.random.default_rng(5)
    mean = multiview_embed(x, net, 8, views, r1)[0]
    r2 = np.random.default_rng(5)
    each = np.stack([embed(net, augment_batch(x, views, r2))[0]
                     for _ in range(8)])
    assert np.allclose(mean, each.mean(axis=0), atol=1e-5)
    assert np.linalg.norm(mean) <= np.linalg.norm(each, axis=1).max() + 1e-6


def test_multiview_rejects_zero_views(net):
    with pytest.raises(ValueError):
        multiview_embed(np.zeros((1, 32, 17)), net, 0)


# --- fine-tuning ---------------------------------------------------------

def separable_support(rng, n_pos=5, n_neg=20):
    x = rng.normal(size=(n_pos + n_neg, 32, 17)).astype(np.float32)
    x[:n_pos, 20:26] += 3.0
    return x, np.array([1] * n_pos + [0] * n_neg)


def test_zero_epochs_is_bit_identical(net, rng):
    x, y = separable_support(rng)
    adapted, hist = finetune(net, x, y, AdaptConfig(epochs=0))
    assert hist == [] and adapted is not net
    assert np.array_equal(embed(adapted, x), embed(net, x))


def test_finetune_reduces_support_loss_and_leaves_input_untouched(net, rng):
    x, y = separable_support(rng)
    before = {k: v.clone() for k, v in net.state_dict().items()}
    adapted, hist = finetune(net, x, y, AdaptConfig(epochs=40))
    assert len(hist) == 40
    cfg = AdaptConfig()
    with torch.no_grad():
        l0 = support_loss(net(x)[1], torch.as_tensor(y), cfg).item()
        l1 = support_loss(adapted(x)[1], torch.as_tensor(y), cfg).item()
    assert l1 <= l0
    for k, v in net.state_dict().items():
        assert torch.equal(v, before[k])


@pytest.mark.parametrize("loss", ["scl", "proto_orig", "proto_mod"])
def test_finetune_losses_run(net, rng, loss):
    x, y = separable_support(rng)
    _, hist = finetune(net, x, y, AdaptConfig(epochs=2, loss=loss, momentum=0.9, freeze_norm_stats=False))
    assert len(hist) == 2 and all(np.isfinite(hist))


def test_balanced_support_counts(rng):
    labels = np.array([1] * 5 + [0] * 20)
    idx = balanced_support(labels, rng)
    assert (labels[idx] == 1).sum() == (labels[idx] == 0).sum() == 20


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(loss="triplet")
    with pytest.raises(ValueError):
        AdaptConfig(epochs=-1)
