import logging

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from services.residual import (
    ResidualModel,
    apply_bias,
    cross_fit_folds,
    estimate_bias,
    estimate_sigma2,
    fit_residual_model,
    simulate_training_recovery,
)
from services.subspace import SubspaceModel, make_mask, train_basis
from services.synthetic import low_rank_matrix, low_rank_plus_noise


def _random_model(rng, v, r):
    q, _ = np.linalg.qr(rng.standard_normal((v, r)))
    return SubspaceModel(basis=q, training_trials=0, passes=0)


# ----- sigma2 -----

def test_sigma2_is_mean_square():
    assert estimate_sigma2(np.array([[1.0, -1.0], [1.0, -1.0]])) == 1.0
    assert estimate_sigma2(np.zeros((3, 4))) == 0.0
    assert estimate_sigma2(np.array([[3.0, 0.0, 0.0, 1.0]])) == pytest.approx(2.5)


def test_sigma2_of_gaussian_entries():
    S = np.random.default_rng(40).normal(scale=0.2, size=(1000, 1000))
    assert abs(estimate_sigma2(S) - 0.04) <= 0.001


def test_sigma2_of_empty_matrix():
    with pytest.raises(ValueError):
        estimate_sigma2(np.empty((0, 3)))


def test_negative_sigma2_rejected():
    with pytest.raises(ValueError):
        ResidualModel(sigma2=-0.1)


def test_dict_round_trip():
    model = ResidualModel(sigma2=0.5, bias_shift=-0.25, training_trials=8, per_trial_max_gap=np.arange(8.0))
    back = ResidualModel.from_dict(model.to_dict(), model.per_trial_max_gap)
    assert back.sigma2 == 0.5 and back.bias_shift == -0.25 and back.training_trials == 8
    assert_array_equal(back.per_trial_max_gap, np.arange(8.0))


# ----- bias shift -----

def test_full_sampling_gives_zero_bias():
    P = low_rank_plus_noise(150, 30, 3, sigma=0.3, seed=4)
    model = train_basis(P, 3, rate=1.0, passes=1)
    mask = make_mask(1.0, 150, 30, mask_seed=2)
    residual, run = fit_residual_model(P, model, mask, seed=11)
    assert residual.bias_shift == 0.0
    assert_array_equal(run.true_maxima, run.recovered_maxima)


def test_exact_low_rank_without_residual_has_no_bias():
    P = low_rank_matrix(300, 40, 4, seed=6)
    model = train_basis(P, 4, rate=1.0, passes=1)
    mask = make_mask(0.1, 300, 40, mask_seed=5, rank=4)
    residual, run = fit_residual_model(P, model, mask, seed=1)
    assert residual.sigma2 < 1e-20
    assert abs(residual.bias_shift) < 1e-8
    assert run.max_abs_error.max() < 1e-8


def test_ignoring_residual_variance_understates_the_max(rng):
    # pure noise: with sigma2 = 0 the recovered column only sees the sampled entries
    v, T = 2000, 100
    P = rng.standard_normal((v, T))
    model = _random_model(rng, v, 2)
    mask = make_mask(0.05, v, T, mask_seed=3, rank=2)
    train, held_out = P[:, :50], P[:, 50:]

    b_zero = estimate_bias(train, model, mask, sigma2=0.0, seed=7)
    b_true = estimate_bias(train, model, mask, sigma2=1.0, seed=7)
    assert b_zero > 0.5
    assert abs(b_true) < 0.3

    # recentring with the training shift carries over to unseen trials
    gaps = simulate_training_recovery(held_out, model, mask, sigma2=0.0, seed=8).gaps
    assert abs(np.mean(gaps - b_zero)) < abs(np.mean(gaps))
    assert abs(np.mean(gaps - b_zero)) < 0.3


def test_shift_makes_training_maxima_unbiased():
    P = low_rank_plus_noise(500, 60, 4, sigma=0.5, seed=12)
    model = train_basis(P, 4, rate=1.0, passes=1)
    mask = make_mask(0.05, 500, 60, mask_seed=9, rank=4)
    residual, run = fit_residual_model(P, model, mask, seed=21)
    shifted = apply_bias(run.recovered_maxima, residual.bias_shift)
    assert abs(np.mean(run.true_maxima - shifted)) < 1e-10
    assert_array_equal(residual.per_trial_max_gap, run.gaps)
    assert residual.training_trials == 60


def test_gap_bounded_by_worst_entry_error():
    P = low_rank_plus_noise(400, 50, 3, sigma=1.0, seed=13)
    model = train_basis(P, 3, rate=1.0, passes=1)
    mask = make_mask(0.04, 400, 50, mask_seed=1, rank=3)
    for two_sided in (False, True):
        run = simulate_training_recovery(P, model, mask, sigma2=0.8, seed=2, two_sided=two_sided)
        assert np.all(np.abs(run.gaps) <= run.max_abs_error + 1e-12)


def test_sigma2_taken_from_training_residual():
    P = low_rank_plus_noise(200, 30, 2, sigma=0.4, seed=14)
    model = train_basis(P, 2, rate=1.0, passes=1)
    mask = make_mask(0.2, 200, 30, mask_seed=4, rank=2)
    residual, _ = fit_residual_model(P, model, mask, seed=3, folds=1)
    assert residual.sigma2 == pytest.approx(np.mean(model.training_residual ** 2), rel=1e-12)
    assert residual.folds == 1

    model.training_residual = None
    again, _ = fit_residual_model(P, model, mask, seed=3, folds=1)
    assert again.sigma2 == pytest.approx(residual.sigma2, rel=1e-10)


def test_mask_must_cover_training_block(rng):
    model = _random_model(rng, 50, 2)
    mask = make_mask(0.5, 50, 5, mask_seed=0)
    with pytest.raises(ValueError):
        simulate_training_recovery(rng.standard_normal((50, 10)), model, mask, sigma2=1.0, seed=0)


def test_same_seed_same_shift(rng):
    P = rng.standard_normal((300, 20))
    model = _random_model(rng, 300, 3)
    mask = make_mask(0.1, 300, 20, mask_seed=6, rank=3)
    assert estimate_bias(P, model, mask, 0.5, seed=4) == estimate_bias(P, model, mask, 0.5, seed=4)


# ----- cross-fitting -----

def test_fold_layout():
    blocks = cross_fit_folds(100, 30, 5)
    assert [len(b) for b in blocks] == [20] * 5
    assert_array_equal(np.concatenate(blocks), np.arange(100))
    assert cross_fit_folds(12, 3, 5)[0].tolist() == [0, 1, 2]
    assert cross_fit_folds(10, 10, 5) == []
    assert cross_fit_folds(40, 4, 1) == []


def test_held_out_sigma2_matches_manual_folds():
    P = low_rank_plus_noise(300, 50, 3, sigma=0.5, seed=15)
    model = train_basis(P, 3)
    mask = make_mask(0.2, 300, 50, mask_seed=2, rank=3)
    residual, run = fit_residual_model(P, model, mask, seed=5, folds=5)
    assert residual.folds == 5

    squares = []
    for held in np.array_split(np.arange(50), 5):
        keep = np.setdiff1d(np.arange(50), held)
        u, _, _ = np.linalg.svd(P[:, keep], full_matrices=False)
        U = u[:, :3]
        S = P[:, held] - U @ (U.T @ P[:, held])
        squares.append(S ** 2)
    expected = np.mean(np.hstack(squares))
    assert residual.sigma2 == pytest.approx(expected, rel=1e-10)
    assert residual.sigma2 > np.mean(model.training_residual ** 2)
    assert_array_equal(run.true_maxima, P.max(axis=0))
    assert residual.bias_shift == pytest.approx(np.mean(run.gaps), abs=1e-15)


def test_held_out_gaps_use_each_trial_mask():
    P = low_rank_plus_noise(200, 30, 2, sigma=0.4, seed=16)
    model = train_basis(P, 2)
    mask = make_mask(0.1, 200, 30, mask_seed=8, rank=2)
    residual, run = fit_residual_model(P, model, mask, seed=9, folds=3)
    held = np.arange(10, 20)
    keep = np.setdiff1d(np.arange(30), held)
    fold = train_basis(P[:, keep], 2, keep_residual=False)
    direct = simulate_training_recovery(P[:, held], fold, mask, residual.sigma2, seed=9, trials=held)
    assert_array_equal(run.recovered_maxima[held], direct.recovered_maxima)


def test_too_few_trials_fall_back_to_in_sample(caplog):
    P = low_rank_plus_noise(100, 6, 5, sigma=0.3, seed=17)
    model = train_basis(P, 5)
    mask = make_mask(0.5, 100, 6, mask_seed=1, rank=5)
    with caplog.at_level(logging.WARNING):
        residual, _ = fit_residual_model(P, model, mask, seed=2, folds=5)
    assert residual.folds == 1
    assert "in-sample" in caplog.text
    assert residual.sigma2 == pytest.approx(np.mean(model.training_residual ** 2), rel=1e-12)


def test_trial_indices_must_fit_the_mask(rng):
    model = _random_model(rng, 40, 2)
    mask = make_mask(0.5, 40, 10, mask_seed=0)
    with pytest.raises(ValueError):
        simulate_training_recovery(rng.standard_normal((40, 2)), model, mask, 1.0, seed=0, trials=[3, 10])
    with pytest.raises(ValueError):
        simulate_training_recovery(rng.standard_normal((40, 2)), model, mask, 1.0, seed=0, trials=[3])
