# services/rmt.py - spectral checks of the low-rank-plus-noise model
"""
Random-matrix validation of P = U W + S with S i.i.d. Normal(0, sigma2):

- Marchenko-Pastur edges of the noise bulk of S S^T
- predicted perturbed eigenvalues of P P^T for planted spikes
- the perturbation condition |lambda_tilde - lambda| < delta * lambda
- the Chebyshev-type bound on recovered-maximum gaps

Results are asymptotic statements checked at finite size, so every check
reports rather than raises.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from services.errors import ConfigError
from services.parallel_engine import execute_parallel_jobs
from services.permcore import trial_rng

logger = logging.getLogger(__name__)

STREAM_SPECTRUM = 4


# ─────────────────────────────────────────────
# SCENARIO
# ─────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SpectralScenario:
    v: int
    t: int
    lambdas: np.ndarray
    sigma2: float
    delta: float = 0.5

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if self.v < 1 or self.t < 1:
            raise ConfigError(f"dimensions must be positive, got v={self.v}, t={self.t}")
        if lam.size < 1 or lam.size > self.v:
            raise ConfigError(f"need 1 <= r <= v planted eigenvalues, got {lam.size}")
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise ConfigError("planted eigenvalues must be strictly positive and sorted descending")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be non-negative, got {self.sigma2}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        object.__setattr__(self, "lambdas", lam)

    @property
    def rank(self) -> int:
        return int(self.lambdas.shape[0])

    @property
    def gamma(self) -> float:
        return self.v / self.t

    @property
    def premise_holds(self) -> bool:
        """sigma2 < delta * lambda_r / t."""
        return self.sigma2 < self.delta * self.lambdas[-1] / self.t


# ─────────────────────────────────────────────
# CLOSED FORMS
# ─────────────────────────────────────────────

def mp_support(sigma2: float, v: int, t: int) -> Tuple[float, float]:
    """(gamma_minus, gamma_plus) = sigma2 * t * (1 -/+ sqrt(v/t))^2."""
    root = math.sqrt(v / t)
    return sigma2 * t * (1.0 - root) ** 2, sigma2 * t * (1.0 + root) ** 2


def mp_density(sigma2: float, v: int, t: int, points: int = 1000) -> pd.Series:
    """Marchenko-Pastur density of S S^T eigenvalues on its support, indexed by eigenvalue."""
    lo, hi = mp_support(sigma2, v, t)
    gamma = v / t
    grid = np.linspace(lo, hi, points)
    scale = sigma2 * t
    with np.errstate(invalid="ignore", divide="ignore"):
        pdf = np.sqrt(np.clip((hi - grid) * (grid - lo), 0.0, None)) / (2 * np.pi * gamma * scale * grid)
    return pd.Series(np.nan_to_num(pdf), index=grid)


def predicted_spike_eigenvalues(scenario: SpectralScenario) -> np.ndarray:
    """
    Length-v prediction: lambda_i + sigma2 t + gamma sigma2^2 t^2 / lambda_i for
    planted lambda_i above gamma sigma2 t (else gamma sigma2 t), then the bulk
    value sigma2 t (1 - 2 sqrt(gamma)) for the remaining v - r entries.
    """
    s = scenario.sigma2 * scenario.t
    gamma = scenario.gamma
    lam = scenario.lambdas
    edge = gamma * s
    spikes = np.where(lam > edge, lam + s + gamma * s * s / lam, edge)
    bulk = np.full(scenario.v - scenario.rank, s * (1.0 - 2.0 * math.sqrt(gamma)))
    return np.concatenate([spikes, bulk])


def analytic_star_holds(scenario: SpectralScenario) -> bool:
    """Substitute the spike predictions into |lambda_tilde - lambda| < delta * lambda."""
    s = scenario.sigma2 * scenario.t
    lam = scenario.lambdas
    shift = s + scenario.gamma * s * s / lam
    return bool(np.all(shift < scenario.delta * lam))


# ─────────────────────────────────────────────
# SIMULATION
# ─────────────────────────────────────────────

def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def simulate_noise_spectrum(sigma2: float, v: int, t: int, seed: int = 0) -> np.ndarray:
    """Eigenvalues of S S^T, descending."""
    rng = trial_rng(seed, 0, STREAM_SPECTRUM)
    S = math.sqrt(sigma2) * rng.standard_normal((v, t))
    return np.linalg.eigvalsh(S @ S.T)[::-1]


def simulate_spectrum(scenario: SpectralScenario, seed: int = 0, include_cross_terms: bool = True) -> np.ndarray:
    """
    Eigenvalues of P P^T (descending) for P = U W + S, with W = diag(sqrt(lambda)) V^T
    and U, V orthonormal, so U W W^T U^T carries exactly the planted spectrum.
    Without cross terms the Gram matrix is Q + S S^T instead.
    """
    rng = trial_rng(seed, 0, STREAM_SPECTRUM)
    v, t, r = scenario.v, scenario.t, scenario.rank
    U = _orthonormal(rng, v, r)
    V = _orthonormal(rng, t, r)
    low_rank = (U * np.sqrt(scenario.lambdas)) @ V.T
    S = math.sqrt(scenario.sigma2) * rng.standard_normal((v, t))
    if include_cross_terms:
        P = low_rank + S
        gram = P @ P.T
    else:
        gram = low_rank @ low_rank.T + S @ S.T
    return np.linalg.eigvalsh(gram)[::-1]


# ─────────────────────────────────────────────
# CHECKS
# ─────────────────────────────────────────────

@dataclass(eq=False)
class StarReport:
    premise: bool
    spike_holds: np.ndarray
    bulk_holds: bool
    spike_relative_error: np.ndarray
    bulk_max: float
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return bool(self.spike_holds.all() and self.bulk_holds)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "premise": self.premise,
            "holds": self.holds,
            "spike_holds": [bool(x) for x in self.spike_holds],
            "bulk_holds": self.bulk_holds,
            "spike_relative_error": [float(x) for x in self.spike_relative_error],
            "bulk_max": self.bulk_max,
        }


def check_star_condition(scenario: SpectralScenario, simulated_eigs: np.ndarray) -> StarReport:
    eigs = np.asarray(simulated_eigs, dtype=np.float64)
    r = scenario.rank
    lam = scenario.lambdas
    spikes = eigs[:r]
    spike_ok = np.abs(spikes - lam) < scenario.delta * lam
    bulk = eigs[r:]
    bulk_max = float(bulk.max()) if bulk.size else 0.0
    predicted = predicted_spike_eigenvalues(scenario)[:r]
    rel_err = np.abs(spikes - predicted) / predicted
    return StarReport(
        premise=bool(scenario.premise_holds),
        spike_holds=spike_ok,
        bulk_holds=bool(bulk_max < scenario.delta * lam[-1]),
        spike_relative_error=rel_err,
        bulk_max=bulk_max,
    )


def chebyshev_bound_check(gaps: np.ndarray, b: float, b_hat: float, eps: float,
                          ks: Sequence[float] = (2.0, 3.0, 5.0)) -> pd.DataFrame:
    """
    Empirical Pr[gap - (b - b_hat) > k eps] against 1/k^2 plus 3/sqrt(T)
    Monte-Carlo slack. k <= 1 rows are marked trivially satisfied.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    gaps = np.asarray(gaps, dtype=np.float64)
    if not np.all(np.isfinite(gaps)):
        raise ValueError("gaps must be finite")
    T = gaps.shape[0]
    slack = 3.0 / math.sqrt(T)
    centred = gaps - (b - b_hat)
    rows: List[Dict[str, Any]] = []
    for k in ks:
        bound = 1.0 / (k * k)
        freq = float(np.mean(centred > k * eps))
        trivial = k <= 1.0
        rows.append({
            "k": float(k),
            "bound": bound,
            "slack": slack,
            "exceedance": freq,
            "trivial": trivial,
            "passed": trivial or freq <= bound + slack,
        })
    return pd.DataFrame(rows)


# ─────────────────────────────────────────────
# SWEEPS
# ─────────────────────────────────────────────

def _draw_job(draw: int, scenario: SpectralScenario, seed: int) -> StarReport:
    eigs = simulate_spectrum(scenario, seed=seed + draw)
    return check_star_condition(scenario, eigs)


def run_sweep(config: Dict[str, Any], workers: int = 1) -> pd.DataFrame:
    """
    One row per sigma2 in the grid: premise flag, analytic check, empirical
    pass rate over `draws` simulations and spike error statistics.
    """
    lambdas = np.asarray(config["lambdas"], dtype=np.float64)
    delta = float(config.get("delta", 0.5))
    draws = int(config.get("draws", 100))
    seed = int(config.get("seed", 0))
    rows: List[Dict[str, Any]] = []
    for sigma2 in config["sigma2_grid"]:
        scenario = SpectralScenario(v=int(config["v"]), t=int(config["t"]), lambdas=lambdas,
                                    sigma2=float(sigma2), delta=delta)
        logger.info(f"🔄 Spectral sweep sigma2={sigma2}: {draws} draws (v={scenario.v}, t={scenario.t})")
        reports = execute_parallel_jobs(range(draws), _draw_job, workers, scenario, seed)
        errors = np.array([rep.spike_relative_error for rep in reports])
        rows.append({
            "sigma2": float(sigma2),
            "gamma": scenario.gamma,
            "premise": scenario.premise_holds,
            "analytic_holds": analytic_star_holds(scenario),
            "draws": draws,
            "pass_rate": float(np.mean([rep.holds for rep in reports])),
            "mean_spike_rel_error": float(errors.mean()),
            "max_spike_rel_error": float(errors.max()),
        })
    return pd.DataFrame(rows)
