import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

import oracles
from fsbsed.errors import ConfigurationError, NumericError
from fsbsed.losses import (
    LossConfig,
    ProjectedBatch,
    cross_entropy_loss,
    effective_rank,
    finetune_proto_loss,
    ntxent_loss,
    pretrain_loss,
    pretrain_loss_terms,
    prototype_logit_loss,
    protonets_loss,
    scl_loss,
    total_coding_rate,
)


def t(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


# --- SCL -----------------------------------------------------------------

def test_scl_identical_rows_is_ln3():
    z = t(np.ones((4, 3)))
    for tau in (0.06, 0.5, 2.0):
        assert scl_loss(z, [0, 0, 0, 0], tau).item() == pytest.approx(math.log(3), abs=1e-9)


def test_scl_matches_bruteforce(rng):
    for _ in range(30):
        z, y, _ = oracles.random_two_view_batch(rng)
        assert scl_loss(t(z), y, 0.1).item() == pytest.approx(oracles.scl(z, y, 0.1), abs=1e-6)


def test_scl_sum_reduction(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=5, d=4)
    got = scl_loss(t(z), y, 0.2, reduction="sum").item()
    assert got == pytest.approx(oracles.scl(z, y, 0.2, "sum"), abs=1e-6)


def test_scl_rotation_invariant(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=6, d=5)
    q = ortho_group.rvs(5, random_state=1)
    assert scl_loss(t(z @ q), y, 0.06).item() == pytest.approx(scl_loss(t(z), y, 0.06).item(), abs=1e-6)


def test_scl_rejects_anchor_without_positive():
    with pytest.raises(ConfigurationError):
        scl_loss(t(np.eye(3)), [0, 1, 1])


# --- TCR -----------------------------------------------------------------

def test_tcr_zero_matrix():
    assert total_coding_rate(t(np.zeros((5, 3)))).item() == 0.0


def test_tcr_scalar_case():
    assert total_coding_rate(t([[1.0]]), 0.05).item() == pytest.approx(0.5 * math.log(21), abs=1e-9)


@pytest.mark.parametrize("shape", [(6, 3), (3, 6), (4, 4)])
def test_tcr_matches_logdet_and_eigen(rng, shape):
    z = rng.normal(size=shape)
    got = total_coding_rate(t(z), 0.05).item()
    assert got == pytest.approx(oracles.tcr_logdet(z, 0.05), abs=1e-8)
    assert got == pytest.approx(oracles.tcr_eigen(z, 0.05), abs=1e-8)


def test_tcr_prefers_spread_spectrum():
    rank1 = np.zeros((4, 4))
    rank1[:, 0] = 1.0
    ortho = np.eye(4)
    assert np.linalg.norm(rank1) == pytest.approx(np.linalg.norm(ortho))
    assert total_coding_rate(t(ortho)).item() > total_coding_rate(t(rank1)).item()


def test_tcr_invariant_to_feature_rotation(rng):
    z = rng.normal(size=(7, 5))
    q = ortho_group.rvs(5, random_state=3)
    assert total_coding_rate(t(z @ q)).item() == pytest.approx(total_coding_rate(t(z)).item(), abs=1e-9)


def test_tcr_monotone_in_spectrum(rng):
    u = ortho_group.rvs(5, random_state=0)
    s = np.array([2.0, 1.0, 0.5, 0.1, 0.0])
    base = total_coding_rate(t(u @ np.diag(s))).item()
    for i in range(5):
        bumped = s.copy()
        bumped[i] = math.sqrt(s[i] ** 2 + 0.1)
        assert total_coding_rate(t(u @ np.diag(bumped))).item() > base


def test_tcr_rejects_nan():
    with pytest.raises(NumericError):
        total_coding_rate(t([[np.nan, 1.0]]))


# --- combined objective --------------------------------------------------

def test_pretrain_loss_lambda_zero_is_scl(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=6, d=4)
    cfg = LossConfig(temperature=0.06, tcr_lambda=0.0)
    assert pretrain_loss(t(z), y, cfg).item() == scl_loss(t(z), y, 0.06).item()


def test_pretrain_loss_composes_oracles(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=7, d=6)
    cfg = LossConfig(temperature=0.06, tcr_eps2=0.05, tcr_lambda=1e-4)
    expected = oracles.scl(z, y, 0.06) - 1e-4 * oracles.tcr_logdet(oracles.normalize_rows(z), 0.05)
    assert pretrain_loss(t(z), y, cfg).item() == pytest.approx(expected, abs=1e-9)


def test_pretrain_loss_decreases_with_lambda(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=5, d=4)
    values = [pretrain_loss(t(z), y, LossConfig(tcr_lambda=lam)).item() for lam in (0.0, 1e-4, 1e-2, 1.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_pretrain_terms_are_consistent(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=4, d=3)
    total, scl, tcr = pretrain_loss_terms(t(z), y, LossConfig(tcr_lambda=0.5))
    assert total.item() == pytest.approx(scl.item() - 0.5 * tcr.item())


# --- prototype losses ----------------------------------------------------

def test_finetune_two_class_is_sim_difference():
    sims = t([[0.9, 0.1]])
    own = torch.tensor([0])
    assert prototype_logit_loss(sims, own, exclude_own=True).item() == pytest.approx(-0.8)


def test_finetune_three_equal_classes_is_ln2():
    z = t(np.ones((3, 4)))
    assert finetune_proto_loss(z, [0, 1, 2]).item() == pytest.approx(math.log(2))


def test_protonets_two_equal_classes_is_ln2():
    z = t(np.ones((4, 2)))
    assert protonets_loss(z, [0, 0, 1, 1]).item() == pytest.approx(math.log(2))


def test_proto_losses_match_bruteforce(rng):
    for _ in range(30):
        z, y, _ = oracles.random_two_view_batch(rng, n_classes=int(rng.integers(2, 4)), b=int(rng.integers(3, 9)))
        if len(set(y)) < 2:
            continue
        assert finetune_proto_loss(t(z), y).item() == pytest.approx(oracles.proto_loss(z, y, True), abs=1e-6)
        assert protonets_loss(t(z), y).item() == pytest.approx(oracles.proto_loss(z, y, False), abs=1e-6)


def test_finetune_can_go_negative_while_protonets_cannot():
    z = t([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    y = [0, 0, 1, 1]
    assert finetune_proto_loss(z, y).item() == pytest.approx(-2.0)
    assert protonets_loss(z, y).item() >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_protonets_nonnegative(seed):
    rng = np.random.default_rng(seed)
    z, y, _ = oracles.random_two_view_batch(rng, n_classes=3, b=6)
    if len(set(y)) >= 2:
        assert protonets_loss(t(z), y).item() >= -1e-12


def test_single_class_proto_loss_raises():
    with pytest.raises(ConfigurationError):
        finetune_proto_loss(t(np.ones((3, 2))), [0, 0, 0])


# --- NT-Xent -------------------------------------------------------------

def test_ntxent_identical_rows_is_ln2():
    z = t(np.ones((4, 3)))
    assert ntxent_loss(z, [0, 1, 0, 1]).item() == pytest.approx(math.log(2))


def test_ntxent_matches_bruteforce(rng):
    for _ in range(30):
        z, _, v = oracles.random_two_view_batch(rng)
        assert ntxent_loss(t(z), v, 0.2).item() == pytest.approx(oracles.ntxent(z, v, 0.2), abs=1e-6)


def test_ntxent_ignores_labels_and_is_rotation_invariant(rng):
    z, _, v = oracles.random_two_view_batch(rng, b=5, d=4)
    q = ortho_group.rvs(4, random_state=2)
    assert ntxent_loss(t(z @ q), v).item() == pytest.approx(ntxent_loss(t(z), v).item(), abs=1e-6)


def test_ntxent_rejects_unpaired_rows():
    with pytest.raises(ConfigurationError):
        ntxent_loss(t(np.eye(3)), [0, 0, 1])


# --- cross-entropy -------------------------------------------------------

def test_ce_uniform_logits():
    assert cross_entropy_loss(t(np.zeros((3, 5))), [0, 3, 4]).item() == pytest.approx(math.log(5))


def test_ce_confident_limit():
    logits = t([[50.0, 0.0, 0.0]])
    assert cross_entropy_loss(logits, [0]).item() < 1e-20


def test_ce_matches_oracle(rng):
    logits = rng.normal(size=(6, 4)) * 3
    y = rng.integers(0, 4, size=6)
    assert cross_entropy_loss(t(logits), y).item() == pytest.approx(oracles.cross_entropy(logits, y), abs=1e-6)


def test_ce_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy_loss(t(np.zeros((2, 3))), [0, 3])


# --- effective rank ------------------------------------------------------

def test_effective_rank_orthogonal_rows():
    z = 3.0 * np.eye(6)[:4]
    assert effective_rank(z) == pytest.approx(4.0)


def test_effective_rank_rank_one():
    z = np.outer(np.arange(1, 5), np.ones(3))
    assert effective_rank(z) == pytest.approx(1.0)


def test_effective_rank_matches_svd(rng):
    z = rng.normal(size=(8, 5))
    s = np.linalg.svd(z, compute_uv=False)
    p = s / s.sum()
    assert effective_rank(z) == pytest.approx(math.exp(-(p * np.log(p)).sum()), abs=1e-6)


def test_effective_rank_zero_matrix():
    with pytest.raises(NumericError):
        effective_rank(np.zeros((3, 3)))


# --- structural properties ----------------------------------------------

def test_losses_are_permutation_invariant(rng):
    z, y, v = oracles.random_two_view_batch(rng, b=6, d=4, n_classes=3)
    perm = rng.permutation(len(z))
    zp, yp, vp = t(z[perm]), y[perm], v[perm]
    pairs = [
        (scl_loss(t(z), y), scl_loss(zp, yp)),
        (ntxent_loss(t(z), v), ntxent_loss(zp, vp)),
        (total_coding_rate(t(z)), total_coding_rate(zp)),
    ]
    if len(set(y)) >= 2:
        pairs += [(finetune_proto_loss(t(z), y), finetune_proto_loss(zp, yp)),
                  (protonets_loss(t(z), y), protonets_loss(zp, yp))]
    for a, b in pairs:
        assert a.item() == pytest.approx(b.item(), abs=1e-9)


def test_projected_batch_from_views(rng):
    z1, z2 = torch.randn(3, 4), torch.randn(3, 4)
    batch = ProjectedBatch.from_views(z1, z2, torch.tensor([0, 1, 1]))
    assert batch.z.shape == (6, 4)
    assert torch.allclose(batch.z.norm(dim=1), torch.ones(6))
    assert batch.labels.tolist() == [0, 1, 1, 0, 1, 1]
    assert batch.views.tolist() == [0, 1, 2, 0, 1, 2]


def test_proto_losses_rotation_invariant(rng):
    z, y, _ = oracles.random_two_view_batch(rng, b=6, d=5, n_classes=2)
    y[0], y[1] = 0, 1
    y = np.concatenate([y[:6], y[:6]])
    q = ortho_group.rvs(5, random_state=4)
    for loss in (finetune_proto_loss, protonets_loss):
        assert loss(t(z @ q), y).item() == pytest.approx(loss(t(z), y).item(), abs=1e-9)
