# services/permcore.py - two-sample t statistics and permutation trials
"""
Voxel-wise (feature-wise) two-sample t statistics and label permutation.

Every trial draws its label shuffle from a counter-based Philox stream keyed
by (master_seed, trial_index), so a column of the permutation matrix can be
recomputed on its own, by any worker, in any order.

The t kernel accumulates group sums one subject row at a time with plain
elementwise arithmetic. Each feature's value therefore depends only on that
feature's data, which is what lets `subsampled_column` return entries that
are bit-for-bit equal to the full column.
"""
import itertools
import logging
import threading
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from config import Config
from services.errors import DegenerateLabels, DimensionMismatch, NonFiniteValue, ZeroVarianceWarning
from services.parallel_engine import chunked, execute_parallel_jobs

logger = logging.getLogger(__name__)

_UINT64 = (1 << 64) - 1

# Stream tags: one independent Philox stream family per purpose.
STREAM_SHUFFLE = 0
STREAM_MASK = 1
STREAM_RESIDUAL = 2
STREAM_TRAINING = 3

COLUMN_CHUNK = 16


# ─────────────────────────────────────────────
# RANDOM STREAMS
# ─────────────────────────────────────────────

def trial_rng(seed: int, index: int, stream: int = STREAM_SHUFFLE) -> np.random.Generator:
    """Philox generator for (seed, index, stream); no dependence between indices."""
    seq = np.random.SeedSequence(entropy=int(seed) & _UINT64, spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(seq))


def trial_seed(seed: int, index: int, stream: int = STREAM_SHUFFLE) -> int:
    """A 64-bit seed derived from (seed, index, stream), used as a stream key downstream."""
    seq = np.random.SeedSequence(entropy=int(seed) & _UINT64, spawn_key=(int(stream), int(index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# ─────────────────────────────────────────────
# EVALUATION AUDIT
# ─────────────────────────────────────────────

class EvaluationCounter:
    """Thread-safe tally of individual t-statistic entries computed."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += int(n)


# ─────────────────────────────────────────────
# DOMAIN TYPES
# ─────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Subjects × features measurements plus binary group labels."""

    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        labels = np.asarray(self.labels)
        if values.ndim != 2:
            raise DimensionMismatch(f"values must be a 2-D subjects x features matrix, got shape {values.shape}")
        if labels.ndim != 1 or labels.shape[0] != values.shape[0]:
            raise DimensionMismatch(
                f"labels length {labels.shape[0] if labels.ndim else 0} != value rows {values.shape[0]}"
            )
        bad = ~np.isfinite(values)
        if bad.any():
            row, col = (int(x) for x in np.argwhere(bad)[0])
            raise NonFiniteValue(f"non-finite value {values[row, col]} at row {row}, column {col}")
        if not np.isin(labels, (0, 1)).all():
            raise DegenerateLabels("labels must be 0 or 1")
        labels = labels.astype(np.int8)
        _check_groups(labels)
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def subject_count(self) -> int:
        return int(self.values.shape[0])

    @property
    def feature_count(self) -> int:
        return int(self.values.shape[1])

    @property
    def group_sizes(self) -> tuple:
        n1 = int(self.labels.sum())
        return self.subject_count - n1, n1


@dataclass(frozen=True)
class PermutationPlan:
    trial_count: int
    master_seed: int = Config.DEFAULT_MASTER_SEED
    include_identity: bool = False

    def __post_init__(self):
        if int(self.trial_count) < 1:
            raise ValueError(f"trial_count must be >= 1, got {self.trial_count}")


@dataclass(eq=False)
class PermutationMatrix:
    """features × trials matrix of permuted statistics."""

    stats: np.ndarray
    trial_seeds: np.ndarray
    trial_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.trial_indices is None:
            self.trial_indices = np.arange(self.stats.shape[1])

    @property
    def shape(self) -> tuple:
        return self.stats.shape

    def column(self, t: int) -> np.ndarray:
        return self.stats[:, t]


@dataclass(frozen=True, eq=False)
class SparseColumn:
    """Entries of one permutation column restricted to a feature index set."""

    trial_index: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


# ─────────────────────────────────────────────
# T STATISTIC
# ─────────────────────────────────────────────

def _check_groups(labels: np.ndarray) -> None:
    n1 = int(np.count_nonzero(labels))
    n0 = int(labels.shape[0]) - n1
    if n0 < 2 or n1 < 2:
        raise DegenerateLabels(f"each group needs at least 2 subjects (group sizes {n0}, {n1})")


def _group_moments(block: np.ndarray, rows: np.ndarray):
    """Mean and sum of squared deviations, accumulated row by row."""
    width = block.shape[1]
    total = np.zeros(width)
    for i in rows:
        total += block[i]
    mean = total / len(rows)
    ss = np.zeros(width)
    for i in rows:
        d = block[i] - mean
        ss += d * d
    return mean, ss


def _t_kernel(block: np.ndarray, labels: np.ndarray, equal_var: bool = True,
              feature_index: Optional[np.ndarray] = None) -> np.ndarray:
    rows1 = np.flatnonzero(labels)
    rows0 = np.flatnonzero(labels == 0)
    n0, n1 = len(rows0), len(rows1)
    mean0, ss0 = _group_moments(block, rows0)
    mean1, ss1 = _group_moments(block, rows1)

    if equal_var:
        pooled = (ss0 + ss1) / (n0 + n1 - 2)
        se2 = pooled * (1.0 / n0 + 1.0 / n1)
    else:
        se2 = ss0 / (n0 - 1) / n0 + ss1 / (n1 - 1) / n1

    stat = np.zeros(block.shape[1])
    ok = se2 > 0
    stat[ok] = (mean0[ok] - mean1[ok]) / np.sqrt(se2[ok])

    if not ok.all():
        zero = np.flatnonzero(~ok)
        if feature_index is not None:
            zero = feature_index[zero]
        logger.debug(f"Zero pooled variance at {len(zero)} feature(s)")
        warnings.warn(ZeroVarianceWarning(zero), stacklevel=3)
    return stat


def t_statistic(data: LabeledDataset, labels: Optional[np.ndarray] = None,
                equal_var: bool = True, counter: Optional[EvaluationCounter] = None) -> np.ndarray:
    """
    Two-sample t statistic for every feature, group 0 minus group 1.

    equal_var=True is the classical pooled-variance form; False gives Welch's.
    Features whose variance estimate is exactly zero get statistic 0 and a
    ZeroVarianceWarning.
    """
    labels = data.labels if labels is None else np.asarray(labels)
    if labels.shape != (data.subject_count,):
        raise DimensionMismatch(f"labels length {labels.shape} != subject count {data.subject_count}")
    _check_groups(labels)
    if counter is not None:
        counter.add(data.feature_count)
    return _t_kernel(data.values, labels, equal_var)


def welch_t_statistic(data: LabeledDataset, labels: Optional[np.ndarray] = None) -> np.ndarray:
    return t_statistic(data, labels, equal_var=False)


# ─────────────────────────────────────────────
# PERMUTATIONS
# ─────────────────────────────────────────────

def permute_labels(plan: PermutationPlan, trial_index: int, labels: np.ndarray) -> np.ndarray:
    """Uniform shuffle of `labels` for one trial; trial 0 is the identity if requested."""
    if not 0 <= int(trial_index) < plan.trial_count:
        raise ValueError(f"trial_index {trial_index} outside [0, {plan.trial_count})")
    labels = np.asarray(labels)
    if plan.include_identity and int(trial_index) == 0:
        return labels.copy()
    return trial_rng(plan.master_seed, trial_index, STREAM_SHUFFLE).permutation(labels)


def enumerate_assignments(labels: np.ndarray) -> np.ndarray:
    """Every distinct relabelling with the same group sizes, one per row."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    n1 = int(np.count_nonzero(labels))
    out = []
    for ones in itertools.combinations(range(n), n1):
        row = np.zeros(n, dtype=labels.dtype)
        row[list(ones)] = 1
        out.append(row)
    return np.array(out)


def _column_block_job(trials: List[int], data: LabeledDataset, plan: PermutationPlan,
                      equal_var: bool, counter: Optional[EvaluationCounter]) -> np.ndarray:
    block = np.empty((data.feature_count, len(trials)))
    for j, t in enumerate(trials):
        block[:, j] = t_statistic(data, permute_labels(plan, t, data.labels), equal_var, counter)
    return block


def permutation_columns(data: LabeledDataset, plan: PermutationPlan,
                        trials: Optional[Iterable[int]] = None, workers: Optional[int] = None,
                        equal_var: bool = True,
                        counter: Optional[EvaluationCounter] = None) -> np.ndarray:
    """Dense v × len(trials) block of permutation columns, in trial order."""
    trials = list(range(plan.trial_count)) if trials is None else [int(t) for t in trials]
    if not trials:
        return np.empty((data.feature_count, 0))
    workers = Config.workers() if workers is None else workers
    blocks = execute_parallel_jobs(
        chunked(trials, COLUMN_CHUNK), lambda chunk: _column_block_job(chunk, data, plan, equal_var, counter),
        workers,
    )
    return np.hstack(blocks)


def full_permutation_test(data: LabeledDataset, plan: PermutationPlan, workers: Optional[int] = None,
                          equal_var: bool = True,
                          counter: Optional[EvaluationCounter] = None) -> PermutationMatrix:
    """The exhaustively computed v × T permutation matrix P."""
    logger.info(f"Computing full permutation matrix: v={data.feature_count}, T={plan.trial_count}")
    stats = permutation_columns(data, plan, None, workers, equal_var, counter)
    seeds = np.array([trial_seed(plan.master_seed, t) for t in range(plan.trial_count)], dtype=np.uint64)
    return PermutationMatrix(stats=stats, trial_seeds=seeds)


def _maxima_job(trials: List[int], data: LabeledDataset, plan: PermutationPlan, equal_var: bool,
                two_sided: bool, counter: Optional[EvaluationCounter]) -> np.ndarray:
    block = _column_block_job(trials, data, plan, equal_var, counter)
    return (np.abs(block) if two_sided else block).max(axis=0)


def permutation_maxima(data: LabeledDataset, plan: PermutationPlan,
                       trials: Optional[Iterable[int]] = None, workers: Optional[int] = None,
                       equal_var: bool = True, two_sided: bool = False,
                       counter: Optional[EvaluationCounter] = None) -> np.ndarray:
    """Per-trial maxima streamed chunk by chunk, never holding all of P."""
    trials = list(range(plan.trial_count)) if trials is None else [int(t) for t in trials]
    workers = Config.workers() if workers is None else workers
    parts = execute_parallel_jobs(
        chunked(trials, COLUMN_CHUNK),
        lambda chunk: _maxima_job(chunk, data, plan, equal_var, two_sided, counter),
        workers,
    )
    return np.concatenate(parts) if parts else np.empty(0)


def subsampled_column(data: LabeledDataset, plan: PermutationPlan, trial_index: int,
                      mask: Sequence[int], equal_var: bool = True,
                      counter: Optional[EvaluationCounter] = None) -> SparseColumn:
    """Column `trial_index` of P restricted to `mask`, without touching other features."""
    idx = np.asarray(mask, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("sampling mask must be a non-empty 1-D index set")
    if idx.min() < 0 or idx.max() >= data.feature_count:
        raise ValueError(f"mask indices must lie in [0, {data.feature_count})")
    labels = permute_labels(plan, trial_index, data.labels)
    block = np.ascontiguousarray(data.values[:, idx])
    if counter is not None:
        counter.add(idx.size)
    values = _t_kernel(block, labels, equal_var, feature_index=idx)
    return SparseColumn(trial_index=int(trial_index), indices=idx, values=values)
