import collections

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from services.errors import DegenerateLabels, DimensionMismatch, NonFiniteValue, ZeroVarianceWarning
from services.nulldist import build_null, corrected_p_value
from services.permcore import (
    EvaluationCounter,
    LabeledDataset,
    PermutationPlan,
    enumerate_assignments,
    full_permutation_test,
    permutation_columns,
    permutation_maxima,
    permute_labels,
    subsampled_column,
    t_statistic,
    trial_rng,
    welch_t_statistic,
)


def _brute_force_t(values, labels):
    g0 = values[labels == 0]
    g1 = values[labels == 1]
    n0, n1 = len(g0), len(g1)
    sp2 = ((n0 - 1) * g0.var(axis=0, ddof=1) + (n1 - 1) * g1.var(axis=0, ddof=1)) / (n0 + n1 - 2)
    return (g0.mean(axis=0) - g1.mean(axis=0)) / np.sqrt(sp2 * (1.0 / n0 + 1.0 / n1))


# ----- t statistic -----

def test_identical_groups_give_zero_with_warning():
    data = LabeledDataset(values=np.ones((4, 1)), labels=np.array([0, 0, 1, 1]))
    with pytest.warns(ZeroVarianceWarning) as record:
        t = t_statistic(data)
    assert t[0] == 0.0
    assert record[0].message.features == [0]


def test_hand_computed_pooled_t():
    data = LabeledDataset(values=np.array([[2.0], [4.0], [1.0], [3.0]]), labels=np.array([0, 0, 1, 1]))
    assert t_statistic(data)[0] == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-12)


def test_swapping_labels_negates(tiny_dataset):
    t = t_statistic(tiny_dataset)
    swapped = t_statistic(tiny_dataset, 1 - tiny_dataset.labels)
    assert_array_equal(swapped, -t)


def test_matches_scipy_pooled_and_welch(rng):
    values = rng.normal(size=(15, 40))
    labels = np.array([0] * 7 + [1] * 8)
    data = LabeledDataset(values=values, labels=labels)
    expected = stats.ttest_ind(values[labels == 0], values[labels == 1], axis=0).statistic
    assert_allclose(t_statistic(data), expected, rtol=1e-10)
    welch = stats.ttest_ind(values[labels == 0], values[labels == 1], axis=0, equal_var=False).statistic
    assert_allclose(welch_t_statistic(data), welch, rtol=1e-10)


def test_degenerate_labels_rejected():
    with pytest.raises(DegenerateLabels):
        LabeledDataset(values=np.zeros((4, 2)), labels=np.array([0, 1, 1, 1]))
    with pytest.raises(DegenerateLabels):
        LabeledDataset(values=np.zeros((4, 2)), labels=np.array([0, 0, 1, 2]))


def test_non_finite_value_reports_location():
    values = np.zeros((4, 3))
    values[1, 2] = np.nan
    with pytest.raises(NonFiniteValue, match="row 1, column 2"):
        LabeledDataset(values=values, labels=np.array([0, 0, 1, 1]))


def test_label_length_mismatch():
    with pytest.raises(DimensionMismatch, match="3 != value rows 4"):
        LabeledDataset(values=np.zeros((4, 2)), labels=np.array([0, 1, 1]))


def test_dataset_is_read_only(tiny_dataset):
    with pytest.raises(ValueError):
        tiny_dataset.values[0, 0] = 5.0


# ----- permutations -----

def test_identity_trial(tiny_dataset):
    plan = PermutationPlan(trial_count=5, master_seed=9, include_identity=True)
    assert_array_equal(permute_labels(plan, 0, tiny_dataset.labels), tiny_dataset.labels)


def test_shuffle_is_deterministic_and_keeps_group_sizes(tiny_dataset):
    plan = PermutationPlan(trial_count=50, master_seed=42)
    a = permute_labels(plan, 17, tiny_dataset.labels)
    b = permute_labels(plan, 17, tiny_dataset.labels)
    assert_array_equal(a, b)
    assert a.sum() == tiny_dataset.labels.sum()


def test_trial_index_out_of_range(tiny_dataset):
    plan = PermutationPlan(trial_count=3)
    with pytest.raises(ValueError):
        permute_labels(plan, 3, tiny_dataset.labels)


def test_trial_streams_do_not_depend_on_call_order():
    first = trial_rng(5, 10).standard_normal(4)
    for t in range(10):
        trial_rng(5, t).standard_normal(100)
    assert_array_equal(trial_rng(5, 10).standard_normal(4), first)


def test_shuffles_are_uniform_over_assignments():
    labels = np.array([0, 0, 0, 1, 1, 1])
    plan = PermutationPlan(trial_count=10_000, master_seed=2024)
    counts = collections.Counter(tuple(permute_labels(plan, t, labels)) for t in range(plan.trial_count))
    assert len(counts) == 20
    for count in counts.values():
        assert abs(count / plan.trial_count - 0.05) <= 0.01
    chi2 = stats.chisquare(list(counts.values()))
    assert chi2.pvalue > 1e-4


def test_enumerate_assignments_counts():
    rows = enumerate_assignments(np.array([0, 0, 0, 1, 1, 1]))
    assert rows.shape == (20, 6)
    assert len({tuple(r) for r in rows}) == 20
    assert (rows.sum(axis=1) == 3).all()


# ----- full matrix -----

def test_single_identity_column_equals_observed(tiny_dataset):
    plan = PermutationPlan(trial_count=1, include_identity=True)
    P = full_permutation_test(tiny_dataset, plan)
    assert P.shape == (4, 1)
    assert_array_equal(P.column(0), t_statistic(tiny_dataset))


def test_full_matrix_is_stacked_statistics(rng):
    data = LabeledDataset(values=rng.normal(size=(6, 5)), labels=np.array([0, 1, 0, 1, 0, 1]))
    plan = PermutationPlan(trial_count=3, master_seed=77)
    P = full_permutation_test(data, plan)
    expected = np.column_stack([t_statistic(data, permute_labels(plan, t, data.labels)) for t in range(3)])
    assert_array_equal(P.stats, expected)
    assert P.trial_seeds.shape == (3,)


def test_exhaustive_enumeration_matches_brute_force(tiny_dataset):
    assignments = enumerate_assignments(tiny_dataset.labels)
    columns = np.column_stack([t_statistic(tiny_dataset, a) for a in assignments])
    brute = np.column_stack([_brute_force_t(tiny_dataset.values, a) for a in assignments])
    assert_allclose(columns, brute, atol=1e-12, rtol=0)

    null = build_null(columns.max(axis=0), 0.01)
    observed = float(t_statistic(tiny_dataset).max())
    exceed = sum(1 for m in columns.max(axis=0) if m >= observed)
    assert corrected_p_value(null, observed) == (exceed + 1) / 21


def test_random_plan_columns_match_brute_force(tiny_dataset):
    plan = PermutationPlan(trial_count=20, master_seed=1)
    P = full_permutation_test(tiny_dataset, plan)
    for t in range(20):
        labels = permute_labels(plan, t, tiny_dataset.labels)
        assert_allclose(P.column(t), _brute_force_t(tiny_dataset.values, labels), atol=1e-12, rtol=0)


def test_worker_count_does_not_change_output(small_dataset):
    plan = PermutationPlan(trial_count=70, master_seed=8)
    serial = full_permutation_test(small_dataset, plan, workers=1)
    parallel = full_permutation_test(small_dataset, plan, workers=4)
    assert_array_equal(serial.stats, parallel.stats)


def test_streamed_maxima_match_dense(small_dataset):
    plan = PermutationPlan(trial_count=40, master_seed=8)
    dense = permutation_columns(small_dataset, plan)
    assert_array_equal(permutation_maxima(small_dataset, plan), dense.max(axis=0))
    assert_array_equal(permutation_maxima(small_dataset, plan, two_sided=True), np.abs(dense).max(axis=0))


def test_counter_tallies_entries(small_dataset):
    plan = PermutationPlan(trial_count=10)
    counter = EvaluationCounter()
    permutation_maxima(small_dataset, plan, workers=3, counter=counter)
    assert counter.count == small_dataset.feature_count * 10


# ----- subsampled columns -----

def test_full_mask_equals_full_column(small_dataset):
    plan = PermutationPlan(trial_count=5, master_seed=3)
    P = full_permutation_test(small_dataset, plan)
    col = subsampled_column(small_dataset, plan, 4, np.arange(small_dataset.feature_count))
    assert_array_equal(col.values, P.column(4))


def test_single_entry_mask(small_dataset):
    plan = PermutationPlan(trial_count=5, master_seed=3)
    P = full_permutation_test(small_dataset, plan)
    col = subsampled_column(small_dataset, plan, 2, [123])
    assert col.size == 1
    assert col.values[0] == P.stats[123, 2]


def test_random_masks_are_exact_restrictions(small_dataset, rng):
    plan = PermutationPlan(trial_count=12, master_seed=3)
    P = full_permutation_test(small_dataset, plan)
    for t in range(12):
        mask = np.sort(rng.choice(small_dataset.feature_count, size=rng.integers(1, 60), replace=False))
        counter = EvaluationCounter()
        col = subsampled_column(small_dataset, plan, t, mask, counter=counter)
        assert_array_equal(col.values, P.stats[mask, t])
        assert counter.count == mask.size


def test_empty_mask_rejected(small_dataset):
    with pytest.raises(ValueError):
        subsampled_column(small_dataset, PermutationPlan(2), 0, [])
