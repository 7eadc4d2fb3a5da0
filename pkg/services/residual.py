# services/residual.py - residual variance and max-statistic bias shift
"""
sigma2 and the bias shift are cross-fitted inside the training block: the T0
columns are cut into contiguous folds, a basis is fitted on the other folds,
and the held-out fold supplies residual entries and simulated-recovery gaps.
In-sample residuals of a basis fitted to the same columns are near zero and
its simulated gaps understate what new columns see.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from services.nulldist import column_max
from services.permcore import STREAM_RESIDUAL, SparseColumn, trial_seed
from services.subspace import SamplingMask, SubspaceModel, reconstruct_column, train_basis

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ResidualModel:
    """sigma2 of the Gaussian residual plus the scalar shift added to recovered maxima."""

    sigma2: float
    bias_shift: float = 0.0
    training_trials: int = 0
    per_trial_max_gap: np.ndarray = field(default_factory=lambda: np.empty(0))
    folds: int = 1

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be non-negative, got {self.sigma2}")
        self.per_trial_max_gap = np.asarray(self.per_trial_max_gap, dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma2": float(self.sigma2),
            "bias_shift": float(self.bias_shift),
            "training_trials": int(self.training_trials),
            "cross_fit_folds": int(self.folds),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], gaps: Optional[np.ndarray] = None) -> "ResidualModel":
        return cls(
            sigma2=float(payload["sigma2"]),
            bias_shift=float(payload["bias_shift"]),
            training_trials=int(payload.get("training_trials", 0)),
            per_trial_max_gap=np.empty(0) if gaps is None else gaps,
            folds=int(payload.get("cross_fit_folds", 1)),
        )


@dataclass(eq=False)
class TrainingRecovery:
    """Exact vs simulated-recovery maxima on the training block."""

    true_maxima: np.ndarray
    recovered_maxima: np.ndarray
    max_abs_error: np.ndarray

    @property
    def gaps(self) -> np.ndarray:
        return self.true_maxima - self.recovered_maxima


def estimate_sigma2(S_train: np.ndarray) -> float:
    """Mean of squared residual entries (variance about a zero mean)."""
    S = np.asarray(S_train, dtype=np.float64)
    if S.size == 0:
        raise ValueError("residual matrix is empty")
    return float(np.mean(S * S))


def simulate_training_recovery(P_train: np.ndarray, model: SubspaceModel, mask: SamplingMask,
                               sigma2: float, seed: int, two_sided: bool = False,
                               trials: Optional[Sequence[int]] = None) -> TrainingRecovery:
    """
    Run each training column through the recovery path: subsample, fit, inject, take the max.

    `trials` gives the trial index of every column (default 0..T0-1); masks and
    residual streams are keyed on it.
    """
    P = np.asarray(P_train, dtype=np.float64)
    T0 = P.shape[1]
    trials = list(range(T0)) if trials is None else [int(t) for t in trials]
    if len(trials) != T0:
        raise ValueError(f"{len(trials)} trial indices for {T0} columns")
    if trials and max(trials) >= mask.trial_count:
        raise ValueError(f"mask covers {mask.trial_count} trials but training reaches trial {max(trials)}")
    noise_only = ResidualModel(sigma2=sigma2)
    true_max = np.empty(T0)
    rec_max = np.empty(T0)
    err = np.empty(T0)
    for col, t in enumerate(trials):
        idx = mask.indices(t)
        samples = SparseColumn(trial_index=t, indices=idx, values=P[idx, col])
        recovered = reconstruct_column(model, samples, noise_only, trial_seed(seed, t, STREAM_RESIDUAL))
        true_max[col] = column_max(P[:, col], two_sided)
        rec_max[col] = column_max(recovered.estimate, two_sided)
        err[col] = float(np.max(np.abs(recovered.estimate - P[:, col])))
    return TrainingRecovery(true_maxima=true_max, recovered_maxima=rec_max, max_abs_error=err)


def estimate_bias(P_train: np.ndarray, model: SubspaceModel, mask: SamplingMask, sigma2: float,
                  seed: int, two_sided: bool = False) -> float:
    """b_hat = mean over training trials of (true max - recovered max)."""
    run = simulate_training_recovery(P_train, model, mask, sigma2, seed, two_sided)
    return float(np.mean(run.gaps))


def cross_fit_folds(T0: int, rank: int, folds: int) -> List[np.ndarray]:
    """Contiguous held-out blocks; empty when fewer than `rank` columns would remain to fit on."""
    k = min(int(folds), T0)
    if k < 2:
        return []
    blocks = np.array_split(np.arange(T0), k)
    if T0 - max(len(b) for b in blocks) < rank:
        return []
    return blocks


def _fold_model(P: np.ndarray, held_out: np.ndarray, model: SubspaceModel, passes: int) -> SubspaceModel:
    keep = np.setdiff1d(np.arange(P.shape[1]), held_out)
    return train_basis(P[:, keep], model.rank, model.training_rate, passes, seed=model.seed,
                       method=model.method, keep_residual=False, scale=model.scale, dof=model.dof)


def _in_sample(P: np.ndarray, model: SubspaceModel, mask: SamplingMask, seed: int,
               two_sided: bool) -> Tuple[float, TrainingRecovery]:
    if model.training_residual is not None:
        S = model.training_residual
    else:
        X = model.to_fit_scale(P)
        S = X - model.basis @ (model.basis.T @ X)
    sigma2 = estimate_sigma2(S)
    return sigma2, simulate_training_recovery(P, model, mask, sigma2, seed, two_sided)


def _cross_fitted(P: np.ndarray, model: SubspaceModel, mask: SamplingMask, seed: int, two_sided: bool,
                  blocks: List[np.ndarray], passes: int) -> Tuple[float, TrainingRecovery]:
    fold_models = [_fold_model(P, held, model, passes) for held in blocks]

    square_sum, count = 0.0, 0
    for held, fold in zip(blocks, fold_models):
        X = fold.to_fit_scale(P[:, held])
        S = X - fold.basis @ (fold.basis.T @ X)
        square_sum += float(np.sum(S * S))
        count += S.size
    sigma2 = square_sum / count

    T0 = P.shape[1]
    true_max, rec_max, err = np.empty(T0), np.empty(T0), np.empty(T0)
    for held, fold in zip(blocks, fold_models):
        run = simulate_training_recovery(P[:, held], fold, mask, sigma2, seed, two_sided, trials=held)
        true_max[held], rec_max[held], err[held] = run.true_maxima, run.recovered_maxima, run.max_abs_error
    return sigma2, TrainingRecovery(true_maxima=true_max, recovered_maxima=rec_max, max_abs_error=err)


def fit_residual_model(P_train: np.ndarray, model: SubspaceModel, mask: SamplingMask, seed: int,
                       two_sided: bool = False, folds: int = Config.CROSS_FIT_FOLDS,
                       passes: int = Config.DEFAULT_PASSES) -> Tuple[ResidualModel, TrainingRecovery]:
    """
    sigma2 from held-out training residuals, then b_hat from simulated recovery
    of the held-out columns at that sigma2. folds=1 fits both in-sample against
    `model`; the recovery basis itself is always `model`.
    """
    P = np.asarray(P_train, dtype=np.float64)
    blocks = cross_fit_folds(P.shape[1], model.rank, folds)
    if blocks:
        sigma2, run = _cross_fitted(P, model, mask, seed, two_sided, blocks, passes)
    else:
        if folds > 1:
            logger.warning(f"⚠️ {P.shape[1]} training trials cannot hold out a fold at rank {model.rank}; "
                           f"residual model fitted in-sample")
        sigma2, run = _in_sample(P, model, mask, seed, two_sided)

    gaps = run.gaps
    residual = ResidualModel(sigma2=sigma2, bias_shift=float(np.mean(gaps)),
                             training_trials=int(gaps.shape[0]), per_trial_max_gap=gaps,
                             folds=max(len(blocks), 1))
    logger.info(f"Residual model: sigma2={sigma2:.6g}, bias shift={residual.bias_shift:.6g} "
                f"over {residual.training_trials} training trials ({residual.folds} fold(s))")
    return residual, run


def apply_bias(max_samples: np.ndarray, bias_shift: float) -> np.ndarray:
    return np.asarray(max_samples, dtype=np.float64) + float(bias_shift)
