# services/synthetic.py - synthetic datasets and low-rank test matrices
import logging
from typing import Optional

import numpy as np

from services.permcore import LabeledDataset

logger = logging.getLogger(__name__)


def balanced_labels(n: int) -> np.ndarray:
    """First floor(n/2) subjects in group 0, the rest in group 1."""
    labels = np.zeros(n, dtype=np.int8)
    labels[n // 2:] = 1
    return labels


def generate_dataset(n_subjects: int, n_features: int, rank: int = 5, loading_scale: float = 1.0,
                     noise_sd: float = 1.0, effect_size: float = 0.0, effect_features: int = 0,
                     seed: int = 0, labels: Optional[np.ndarray] = None) -> LabeledDataset:
    """
    Low-rank-plus-noise subjects × features data: each subject's map is a
    loading vector on a planted rank-`rank` feature basis plus i.i.d.
    Gaussian noise. `effect_size` is added to group 1 on the first
    `effect_features` features.
    """
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((rank, n_features))
    loadings = loading_scale * rng.standard_normal((n_subjects, rank))
    values = loadings @ basis + noise_sd * rng.standard_normal((n_subjects, n_features))
    labels = balanced_labels(n_subjects) if labels is None else np.asarray(labels, dtype=np.int8)
    if effect_size and effect_features:
        values[labels == 1, :effect_features] += effect_size
    logger.info(f"Synthetic dataset: n={n_subjects}, v={n_features}, planted rank={rank}, noise sd={noise_sd}")
    return LabeledDataset(values=values, labels=labels)


def low_rank_matrix(rows: int, cols: int, rank: int, seed: int = 0) -> np.ndarray:
    """An exactly rank-`rank` rows × cols matrix."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))


def low_rank_plus_noise(rows: int, cols: int, rank: int, sigma: float, seed: int = 0,
                        scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    signal = scale * rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    return signal + sigma * rng.standard_normal((rows, cols))
