# Randomised property suites: seeded numpy loops, CASES draws each.
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from services.nulldist import (
    bhattacharyya,
    build_null,
    common_support,
    corrected_p_value,
    kl_divergence,
    naive_null,
    rebin,
    threshold,
)
from services.permcore import LabeledDataset, PermutationPlan, SparseColumn, full_permutation_test, t_statistic

CASES = 1000


def _random_dataset(rng, max_n=14, max_v=30):
    n = int(rng.integers(4, max_n + 1))
    n1 = int(rng.integers(2, n - 1))
    labels = np.zeros(n, dtype=int)
    labels[rng.choice(n, size=n1, replace=False)] = 1
    values = rng.normal(size=(n, int(rng.integers(1, max_v + 1)))) * rng.uniform(0.1, 10)
    return LabeledDataset(values=values, labels=labels)


def test_label_swap_negates_statistic():
    rng = np.random.default_rng(101)
    for _ in range(CASES):
        data = _random_dataset(rng)
        assert_allclose(t_statistic(data, 1 - data.labels), -t_statistic(data), rtol=1e-12, atol=1e-12)


def test_affine_rescaling_leaves_statistic_unchanged():
    rng = np.random.default_rng(102)
    for _ in range(CASES):
        data = _random_dataset(rng)
        scale, shift = rng.uniform(0.01, 100), rng.normal(scale=50)
        moved = LabeledDataset(values=data.values * scale + shift, labels=data.labels)
        assert_allclose(t_statistic(moved), t_statistic(data), rtol=1e-7, atol=1e-9)


def test_reordering_subjects_with_their_labels():
    rng = np.random.default_rng(103)
    for _ in range(CASES):
        data = _random_dataset(rng)
        order = rng.permutation(data.subject_count)
        shuffled = LabeledDataset(values=data.values[order], labels=data.labels[order])
        assert_allclose(t_statistic(shuffled), t_statistic(data), rtol=1e-10, atol=1e-12)


def test_naive_max_never_exceeds_true_max():
    rng = np.random.default_rng(104)
    for _ in range(CASES):
        v, T = int(rng.integers(2, 300)), int(rng.integers(1, 8))
        P = rng.normal(size=(v, T))
        columns = []
        for t in range(T):
            idx = np.sort(rng.choice(v, size=int(rng.integers(1, v + 1)), replace=False))
            columns.append(SparseColumn(t, idx, P[idx, t]))
        for two_sided in (False, True):
            naive = naive_null(columns, two_sided=two_sided).max_samples
            truth = np.abs(P).max(axis=0) if two_sided else P.max(axis=0)
            assert np.all(naive <= truth)


def test_divergences_non_negative_and_zero_only_when_identical():
    rng = np.random.default_rng(105)
    for _ in range(CASES):
        p = build_null(rng.normal(size=int(rng.integers(1, 60))), 0.25)
        if rng.random() < 0.3:
            q = build_null(p.max_samples.copy(), 0.25)
        else:
            q = build_null(rng.normal(loc=rng.normal(), size=int(rng.integers(1, 60))), 0.25)
        kl, bd = kl_divergence(p, q), bhattacharyya(p, q)
        assert kl >= 0.0 and bd >= 0.0
        assert bd == pytest.approx(bhattacharyya(q, p), rel=1e-12, abs=1e-15)
        first, count = common_support(p, q)
        pc, qc = rebin(p, first, count), rebin(q, first, count)
        if p.trial_count == q.trial_count and np.array_equal(pc, qc):
            assert kl == 0.0 and bd == 0.0
        elif not np.allclose(pc / p.trial_count, qc / q.trial_count):
            assert kl > 0.0 and bd > 0.0


def test_threshold_non_increasing_in_alpha():
    rng = np.random.default_rng(106)
    for _ in range(CASES):
        T = int(rng.integers(20, 400))
        null = build_null(rng.standard_t(df=5, size=T))
        alphas = np.sort(rng.uniform(1.0 / T, 0.99, size=6))
        for two_sided in (False, True):
            levels = [threshold(null, a, two_sided) for a in alphas]
            assert all(a >= b for a, b in zip(levels, levels[1:]))


def test_p_value_non_increasing_in_observed():
    rng = np.random.default_rng(107)
    for _ in range(CASES):
        null = build_null(rng.normal(size=int(rng.integers(1, 200))))
        observed = np.sort(rng.normal(scale=2, size=8))
        pvals = [corrected_p_value(null, x) for x in observed]
        assert all(a >= b for a, b in zip(pvals, pvals[1:]))
        assert all(1.0 / (null.trial_count + 1) <= p <= 1.0 for p in pvals)


def test_worker_count_never_changes_columns():
    rng = np.random.default_rng(108)
    for _ in range(CASES):
        data = _random_dataset(rng, max_n=10, max_v=12)
        plan = PermutationPlan(trial_count=40, master_seed=int(rng.integers(0, 2**31)))
        serial = full_permutation_test(data, plan, workers=1)
        parallel = full_permutation_test(data, plan, workers=int(rng.integers(2, 5)))
        assert_array_equal(serial.stats, parallel.stats)
