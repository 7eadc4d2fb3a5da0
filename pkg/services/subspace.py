# services/subspace.py - low-rank basis training and column recovery
"""
Training learns an orthonormal rank-r basis U of the permutation matrix from
a block of fully computed trials; recovery fits each later column from a
small random subset of its entries by least squares in that basis.

Two basis estimators share one contract (orthonormal U, captured energy
non-decreasing across passes):

    svd     truncated SVD of the fully computed training block (default);
            optimal for captured energy, so no refinement passes run
    grouse  zero-filled spectral start from subsampled training columns,
            then GROUSE passes over fresh subsets of `rate * v` entries

A GROUSE pass whose captured energy falls below the best so far is rolled
back and ends training.

The fit can run on two scales:

    statistic    the t statistics themselves
    correlation  r = t / sqrt(t^2 + dof), dof = n - 2. For the pooled t this
                 is the point-biserial correlation of each feature with the
                 shuffled labels, so every permutation column lies in the
                 (n - 1)-dimensional span of the centred data

Recovered columns are mapped back to t units; sampled entries always keep
their measured values.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np

from config import Config
from services.errors import InsufficientSamples, RankTooHigh, SingularSystem
from services.permcore import STREAM_MASK, STREAM_RESIDUAL, STREAM_TRAINING, SparseColumn, trial_rng

if TYPE_CHECKING:
    from services.residual import ResidualModel

logger = logging.getLogger(__name__)

BASIS_METHODS = ("svd", "grouse")
RECOVERY_SCALES = ("statistic", "correlation")

# |r| ceiling when mapping back to t units
_R_MAX = 1.0 - 1e-12


# ─────────────────────────────────────────────
# SCALES
# ─────────────────────────────────────────────

def to_fit_scale(values: np.ndarray, scale: str = "statistic", dof: float = 0.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if scale == "statistic":
        return values
    return values / np.sqrt(values * values + dof)


def from_fit_scale(values: np.ndarray, scale: str = "statistic", dof: float = 0.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if scale == "statistic":
        return values
    r = np.clip(values, -_R_MAX, _R_MAX)
    return np.sqrt(dof) * r / np.sqrt(1.0 - r * r)


def _check_scale(scale: str, dof: float) -> None:
    if scale not in RECOVERY_SCALES:
        raise ValueError(f"unknown recovery scale {scale!r}; choose from {RECOVERY_SCALES}")
    if scale == "correlation" and not dof > 0:
        raise ValueError(f"correlation scale needs dof > 0, got {dof}")


# ─────────────────────────────────────────────
# DOMAIN TYPES
# ─────────────────────────────────────────────

@dataclass(eq=False)
class SubspaceModel:
    basis: np.ndarray
    training_trials: int
    passes: int
    training_residual: Optional[np.ndarray] = None
    energy_history: List[float] = field(default_factory=list)
    training_rate: float = 1.0
    method: str = "svd"
    seed: int = 0
    scale: str = "statistic"
    dof: float = 0.0

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    @property
    def feature_count(self) -> int:
        return int(self.basis.shape[0])

    def to_fit_scale(self, values: np.ndarray) -> np.ndarray:
        return to_fit_scale(values, self.scale, self.dof)

    def from_fit_scale(self, values: np.ndarray) -> np.ndarray:
        return from_fit_scale(values, self.scale, self.dof)

    def orthonormality_error(self) -> float:
        gram = self.basis.T @ self.basis
        return float(np.abs(gram - np.eye(self.rank)).max())

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "rank": self.rank,
            "feature_count": self.feature_count,
            "training_trials": self.training_trials,
            "passes": self.passes,
            "training_rate": self.training_rate,
            "method": self.method,
            "seed": self.seed,
            "scale": self.scale,
            "dof": float(self.dof),
            "energy_history": [float(e) for e in self.energy_history],
            "orthonormality_error": self.orthonormality_error(),
        }


@dataclass(frozen=True)
class SamplingMask:
    """Per-trial uniform index sets of identical size; Omega_t is a pure function of (mask_seed, t)."""

    rate: float
    feature_count: int
    trial_count: int
    mask_seed: int
    size: int

    def indices(self, t: int) -> np.ndarray:
        if self.size >= self.feature_count:
            return np.arange(self.feature_count)
        rng = trial_rng(self.mask_seed, t, STREAM_MASK)
        return np.sort(rng.choice(self.feature_count, size=self.size, replace=False))

@dataclass(eq=False)
class RecoveredColumn:
    estimate: np.ndarray
    coefficients: np.ndarray
    observed_mask: np.ndarray
    singular: bool = False


# ─────────────────────────────────────────────
# MASKS
# ─────────────────────────────────────────────

def sample_count(rate: float, v: int) -> int:
    """round(rate * v), half away from zero."""
    return int(np.floor(rate * v + 0.5))


def make_mask(rate: float, v: int, T: int, mask_seed: int, rank: Optional[int] = None,
              min_multiplier: int = Config.MIN_MULTIPLIER) -> SamplingMask:
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sampling rate must lie in (0, 1], got {rate}")
    size = min(sample_count(rate, v), v)
    floor = min_multiplier * rank if rank else 1
    if size < max(floor, 1):
        raise InsufficientSamples(
            f"rate {rate} gives {size} samples per column of {v}; need at least {floor}"
            + (f" ({min_multiplier} x rank {rank})" if rank else "")
        )
    return SamplingMask(rate=float(rate), feature_count=int(v), trial_count=int(T),
                        mask_seed=int(mask_seed), size=size)


# ─────────────────────────────────────────────
# TRAINING
# ─────────────────────────────────────────────

def captured_energy(basis: np.ndarray, P: np.ndarray) -> float:
    """||U^T P||_F^2 / ||P||_F^2 (1.0 for an all-zero P)."""
    total = float(np.sum(P * P))
    if total == 0.0:
        return 1.0
    proj = basis.T @ P
    return float(np.sum(proj * proj)) / total


def _orthonormalize(basis: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(basis)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _grouse_step(basis: np.ndarray, idx: np.ndarray, y: np.ndarray, step: float = 1.0) -> np.ndarray:
    """One GROUSE rotation toward the observed entries `y` on rows `idx`."""
    w, *_ = np.linalg.lstsq(basis[idx], y, rcond=None)
    w_norm = float(np.linalg.norm(w))
    if w_norm == 0.0:
        return basis
    p = basis @ w
    r = np.zeros(basis.shape[0])
    r[idx] = y - basis[idx] @ w
    r_norm = float(np.linalg.norm(r))
    p_norm = float(np.linalg.norm(p))
    if r_norm <= 1e-12 * max(p_norm, 1e-300):
        return basis
    theta = step * np.arctan(r_norm / p_norm)
    direction = (np.cos(theta) - 1.0) * p / p_norm + np.sin(theta) * r / r_norm
    return basis + np.outer(direction, w / w_norm)


def _training_indices(v: int, size: int, seed: int, pass_no: int, T0: int, t: int) -> np.ndarray:
    if size >= v:
        return np.arange(v)
    rng = trial_rng(seed, pass_no * T0 + t, STREAM_TRAINING)
    return np.sort(rng.choice(v, size=size, replace=False))


def _spectral_start(P: np.ndarray, rank: int, size: int, seed: int) -> np.ndarray:
    v, T0 = P.shape
    zero_filled = np.zeros_like(P)
    for t in range(T0):
        idx = _training_indices(v, size, seed, 0, T0, t)
        zero_filled[idx, t] = P[idx, t] * (v / size)
    u, _, _ = np.linalg.svd(zero_filled, full_matrices=False)
    return u[:, :rank]


def train_basis(P_train: np.ndarray, rank: int, rate: float = 1.0, passes: int = Config.DEFAULT_PASSES,
                seed: int = 0, method: str = Config.DEFAULT_BASIS_METHOD,
                min_multiplier: int = Config.MIN_MULTIPLIER, tol: float = Config.CONVERGENCE_TOL,
                step: float = 1.0, keep_residual: bool = True, scale: str = "statistic",
                dof: float = 0.0) -> SubspaceModel:
    """
    Learn a rank-`rank` orthonormal basis from the fully computed training block.

    `rate` and `passes` only steer the GROUSE estimator; the SVD basis is
    reported with passes=0.
    """
    _check_scale(scale, dof)
    X = to_fit_scale(P_train, scale, dof)
    v, T0 = X.shape
    if rank < 1 or rank > min(v, T0):
        raise RankTooHigh(f"rank {rank} exceeds min(v={v}, T0={T0})")
    if method not in BASIS_METHODS:
        raise ValueError(f"unknown basis method {method!r}; choose from {BASIS_METHODS}")
    size = min(sample_count(rate, v), v)
    if size < min_multiplier * rank:
        raise InsufficientSamples(
            f"training rate {rate} gives {size} samples per column; need {min_multiplier} x rank = {min_multiplier * rank}"
        )

    if method == "svd":
        u, _, _ = np.linalg.svd(X, full_matrices=False)
        basis = u[:, :rank].copy()
        best = captured_energy(basis, X)
        history = [best]
        done = 0
        logger.info(f"Training basis (svd, {scale} scale): v={v}, T0={T0}, r={rank}, energy={best:.6f}")
    else:
        basis = _orthonormalize(_spectral_start(X, rank, size, seed))
        best = captured_energy(basis, X)
        history = [best]
        logger.info(f"Training basis (grouse, {scale} scale): v={v}, T0={T0}, r={rank}, start energy={best:.6f}")
        done = 0
        for pass_no in range(1, passes + 1):
            candidate = basis
            for t in range(T0):
                idx = _training_indices(v, size, seed, pass_no, T0, t)
                candidate = _grouse_step(candidate, idx, X[idx, t], step)
            candidate = _orthonormalize(candidate)
            energy = captured_energy(candidate, X)
            done = pass_no
            if energy < best:
                logger.debug(f"Pass {pass_no}: energy {energy:.6f} < best {best:.6f}, rolled back")
                history.append(best)
                break
            gain = energy - best
            basis, best = candidate, energy
            history.append(best)
            logger.debug(f"Pass {pass_no}: energy {best:.6f} (+{gain:.2e})")
            if gain < tol:
                break
        logger.info(f"GROUSE ran {done} pass(es)")

    residual = X - basis @ (basis.T @ X) if keep_residual else None
    logger.info(f"✅ Basis trained, captured energy {best:.6f}")
    return SubspaceModel(basis=basis, training_trials=T0, passes=done, training_residual=residual,
                         energy_history=history, training_rate=float(rate), method=method, seed=int(seed),
                         scale=scale, dof=float(dof))


# ─────────────────────────────────────────────
# RECOVERY
# ─────────────────────────────────────────────

def _coefficients(model: SubspaceModel, samples: SparseColumn, strict: bool) -> Tuple[np.ndarray, bool]:
    sub_basis = model.basis[samples.indices]
    w, _, rank, _ = np.linalg.lstsq(sub_basis, model.to_fit_scale(samples.values), rcond=None)
    singular = rank < sub_basis.shape[1]
    if singular:
        message = f"trial {samples.trial_index}: restricted basis is rank deficient on {samples.size} rows"
        if strict:
            raise SingularSystem(message)
        logger.warning(f"⚠️ {message}; using minimum-norm solution")
    return w, singular


def fit_coefficients(model: SubspaceModel, samples: SparseColumn, strict: bool = False) -> np.ndarray:
    """Least-squares coefficients of the sampled entries in the basis (minimum norm if rank deficient)."""
    return _coefficients(model, samples, strict)[0]


def reconstruct_column(model: SubspaceModel, samples: SparseColumn, residual_model: "ResidualModel",
                       trial_seed: int, strict: bool = False) -> RecoveredColumn:
    """
    Fill a column from its samples: U w on unobserved rows plus N(0, sigma2)
    residual noise on the fit scale; sampled rows keep their measured values exactly.
    """
    w, singular = _coefficients(model, samples, strict)
    estimate = model.basis @ w
    unobserved = np.ones(model.feature_count, dtype=bool)
    unobserved[samples.indices] = False
    missing = int(unobserved.sum())
    sigma2 = float(residual_model.sigma2)
    if missing and sigma2 > 0.0:
        rng = trial_rng(trial_seed, 0, STREAM_RESIDUAL)
        estimate[unobserved] += np.sqrt(sigma2) * rng.standard_normal(missing)
    estimate = model.from_fit_scale(estimate)
    estimate[samples.indices] = samples.values
    return RecoveredColumn(estimate=estimate, coefficients=w, observed_mask=samples.indices, singular=singular)


# ─────────────────────────────────────────────
# TRAINING BUNDLE
# ─────────────────────────────────────────────

def save_bundle(path: str, model: SubspaceModel, residual: "ResidualModel",
                include_residual_matrix: bool = False, extra: Optional[Dict[str, Any]] = None) -> None:
    """Versioned .npz bundle: basis, residual model, diagnostics and seeds."""
    header = {
        "format_version": Config.BUNDLE_FORMAT_VERSION,
        "subspace": model.diagnostics(),
        "residual": residual.to_dict(),
        "extra": extra or {},
    }
    arrays = {
        "basis": model.basis,
        "per_trial_max_gap": np.asarray(residual.per_trial_max_gap, dtype=np.float64),
        "header": np.array(json.dumps(header)),
    }
    if include_residual_matrix and model.training_residual is not None:
        arrays["training_residual"] = model.training_residual
    np.savez_compressed(path, **arrays)
    logger.info(f"Training bundle written to {path}")


def load_bundle(path: str):
    """Inverse of save_bundle; returns (SubspaceModel, ResidualModel, extra)."""
    from services.residual import ResidualModel

    with np.load(path, allow_pickle=False) as bundle:
        header = json.loads(str(bundle["header"]))
        if header.get("format_version") != Config.BUNDLE_FORMAT_VERSION:
            raise ValueError(f"unsupported bundle format {header.get('format_version')}")
        sub = header["subspace"]
        model = SubspaceModel(
            basis=bundle["basis"].copy(),
            training_trials=int(sub["training_trials"]),
            passes=int(sub["passes"]),
            training_residual=bundle["training_residual"].copy() if "training_residual" in bundle.files else None,
            energy_history=list(sub["energy_history"]),
            training_rate=float(sub["training_rate"]),
            method=sub["method"],
            seed=int(sub["seed"]),
            scale=sub.get("scale", "statistic"),
            dof=float(sub.get("dof", 0.0)),
        )
        residual = ResidualModel.from_dict(header["residual"], bundle["per_trial_max_gap"].copy())
    return model, residual, header.get("extra", {})
