# services/nulldist.py - max-statistic null distribution, thresholds and divergences
"""
The max-null is kept two ways at once: the raw per-trial maxima (for
order-statistic thresholds and p-values) and a fixed-width histogram (for
KL / Bhattacharyya comparisons).

Bins are addressed by integer index k = floor(x / bin_width), covering
[k * w, (k + 1) * w). Two histograms with the same width therefore share
edges automatically and only need their index ranges unioned.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config import Config
from services.errors import InsufficientTrials

logger = logging.getLogger(__name__)

_QUANTILE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MaxNullDistribution:
    max_samples: np.ndarray
    bin_width: float
    first_bin: int
    counts: np.ndarray

    @property
    def trial_count(self) -> int:
        return int(self.max_samples.shape[0])

    @property
    def bin_count(self) -> int:
        return int(self.counts.shape[0])

    @property
    def edges(self) -> np.ndarray:
        return (self.first_bin + np.arange(self.bin_count + 1)) * self.bin_width

    def probabilities(self) -> np.ndarray:
        return self.counts / float(self.counts.sum())


# ─────────────────────────────────────────────
# CONSTRUCTION
# ─────────────────────────────────────────────

def column_max(column: np.ndarray, two_sided: bool = False) -> float:
    """max_i column[i], or max_i |column[i]| for two-sided testing."""
    column = np.asarray(column)
    return float(np.max(np.abs(column)) if two_sided else np.max(column))


def _bin_index(samples: np.ndarray, bin_width: float) -> np.ndarray:
    # quotients within 1e-9 of an integer belong to the bin that edge opens (0.29 / 0.01 = 28.999...)
    return np.floor(np.round(samples / bin_width, 9)).astype(np.int64)


def build_null(max_samples: Iterable[float], bin_width: float = Config.DEFAULT_BIN_WIDTH) -> MaxNullDistribution:
    samples = np.asarray(list(max_samples) if not isinstance(max_samples, np.ndarray) else max_samples,
                         dtype=np.float64).ravel()
    if samples.size < 1:
        raise InsufficientTrials("a null distribution needs at least one sample")
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    idx = _bin_index(samples, bin_width)
    first = int(idx.min())
    counts = np.bincount(idx - first).astype(np.int64)
    samples = samples.copy()
    samples.setflags(write=False)
    return MaxNullDistribution(max_samples=samples, bin_width=float(bin_width), first_bin=first, counts=counts)


def naive_null(columns: Sequence, bin_width: float = Config.DEFAULT_BIN_WIDTH,
               two_sided: bool = False) -> MaxNullDistribution:
    """Maxima over only the sampled entries of each trial, no completion and no correction."""
    return build_null([column_max(c.values, two_sided) for c in columns], bin_width)


# ─────────────────────────────────────────────
# THRESHOLDS & P-VALUES
# ─────────────────────────────────────────────

def quantile_level(alpha: float, two_sided: bool = False) -> float:
    return 1.0 - alpha / 2.0 if two_sided else 1.0 - alpha


def threshold(null: MaxNullDistribution, alpha: float, two_sided: bool = False) -> float:
    """
    Order statistic at index ceil(q * T) of the sorted maxima, q = 1 - alpha
    (1 - alpha/2 when two_sided). No interpolation.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    T = null.trial_count
    if T * alpha < 1.0 - _QUANTILE_TOL:
        raise InsufficientTrials(f"T={T} trials cannot resolve alpha={alpha}; need at least {math.ceil(1 / alpha)}")
    q = quantile_level(alpha, two_sided)
    k = int(math.ceil(q * T - _QUANTILE_TOL))
    k = min(max(k, 1), T)
    ordered = np.sort(null.max_samples)
    return float(ordered[k - 1])


def thresholds(null: MaxNullDistribution, alpha_levels: Sequence[float] = Config.DEFAULT_ALPHA_LEVELS,
               two_sided: bool = False) -> Dict[float, Optional[float]]:
    """Threshold per alpha; None where T is too small to resolve that alpha."""
    out: Dict[float, Optional[float]] = {}
    for alpha in alpha_levels:
        try:
            out[float(alpha)] = threshold(null, alpha, two_sided)
        except InsufficientTrials as e:
            logger.warning(f"⚠️ {e}")
            out[float(alpha)] = None
    return out


def corrected_p_value(null: MaxNullDistribution, observed_stat: float) -> float:
    """(#{m_t >= observed} + 1) / (T + 1)."""
    exceed = int(np.count_nonzero(null.max_samples >= observed_stat))
    return (exceed + 1.0) / (null.trial_count + 1.0)


def corrected_p_values(null: MaxNullDistribution, observed: np.ndarray) -> np.ndarray:
    """Vectorised corrected_p_value for every observed feature statistic."""
    ordered = np.sort(null.max_samples)
    exceed = ordered.shape[0] - np.searchsorted(ordered, np.asarray(observed, dtype=np.float64), side="left")
    return (exceed + 1.0) / (ordered.shape[0] + 1.0)


def bonferroni_threshold(alpha: float, v: int, n0: int, n1: int, two_sided: bool = False) -> float:
    """Parametric union-bound t threshold at alpha / v, df = n0 + n1 - 2."""
    tail = alpha / v / (2.0 if two_sided else 1.0)
    return float(stats.t.isf(tail, df=n0 + n1 - 2))


# ─────────────────────────────────────────────
# DIVERGENCES
# ─────────────────────────────────────────────

def common_support(p: MaxNullDistribution, q: MaxNullDistribution) -> Tuple[int, int]:
    """(first_bin, bin_count) covering the union of both index ranges."""
    if not math.isclose(p.bin_width, q.bin_width, rel_tol=1e-12):
        raise ValueError(f"bin widths differ: {p.bin_width} vs {q.bin_width}")
    first = min(p.first_bin, q.first_bin)
    last = max(p.first_bin + p.bin_count, q.first_bin + q.bin_count)
    return first, last - first


def rebin(null: MaxNullDistribution, first_bin: int, bin_count: int) -> np.ndarray:
    """Counts of `null` laid onto the range [first_bin, first_bin + bin_count)."""
    offset = null.first_bin - first_bin
    if offset < 0 or offset + null.bin_count > bin_count:
        raise ValueError("target range does not cover the histogram")
    out = np.zeros(bin_count, dtype=np.int64)
    out[offset:offset + null.bin_count] = null.counts
    return out


def smoothing_epsilon(trial_count: int) -> float:
    return 1.0 / (10.0 * trial_count)


def smooth(probabilities: np.ndarray, epsilon: float) -> np.ndarray:
    """Add epsilon to every bin and renormalise."""
    p = np.asarray(probabilities, dtype=np.float64) + epsilon
    return p / p.sum()


def kl_probabilities(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return max(0.0, float(np.sum(p[nz] * np.log(p[nz] / q[nz]))))


def bhattacharyya_probabilities(p: np.ndarray, q: np.ndarray) -> float:
    if np.array_equal(p, q):
        return 0.0
    coeff = float(np.sum(np.sqrt(np.asarray(p, dtype=np.float64) * np.asarray(q, dtype=np.float64))))
    return max(0.0, -math.log(coeff))


def _aligned(p: MaxNullDistribution, q: MaxNullDistribution) -> Tuple[np.ndarray, np.ndarray]:
    first, count = common_support(p, q)
    pc = rebin(p, first, count)
    qc = rebin(q, first, count)
    return (smooth(pc / p.trial_count, smoothing_epsilon(p.trial_count)),
            smooth(qc / q.trial_count, smoothing_epsilon(q.trial_count)))


def kl_divergence(p: MaxNullDistribution, q: MaxNullDistribution) -> float:
    """KL(p || q) on the common support after smoothing; p is the reference."""
    return kl_probabilities(*_aligned(p, q))


def bhattacharyya(p: MaxNullDistribution, q: MaxNullDistribution) -> float:
    return bhattacharyya_probabilities(*_aligned(p, q))


# ─────────────────────────────────────────────
# EXPORT PAYLOADS
# ─────────────────────────────────────────────

def histogram_frame(null: MaxNullDistribution) -> pd.DataFrame:
    edges = null.edges
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "count": null.counts,
    })


def null_summary(null: MaxNullDistribution, alpha_levels: Sequence[float] = Config.DEFAULT_ALPHA_LEVELS,
                 two_sided: bool = False, include_samples: bool = True) -> Dict[str, Any]:
    levels = thresholds(null, alpha_levels, two_sided)
    summary: Dict[str, Any] = {
        "trial_count": null.trial_count,
        "bin_width": null.bin_width,
        "mean": float(np.mean(null.max_samples)),
        "std": float(np.std(null.max_samples)),
        "thresholds": {f"{alpha:g}": value for alpha, value in levels.items()},
        "unresolved_alphas": [alpha for alpha, value in levels.items() if value is None],
    }
    if include_samples:
        summary["samples"] = [float(x) for x in null.max_samples]
    return summary
