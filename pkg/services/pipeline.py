# services/pipeline.py - run configuration and the full / fast / compare orchestration
"""
full     exact max-null from every permutation column (streamed maxima)
fast     training on the first T0 trials, then subsampled recovery of the
         remaining T - T0 columns, bias-corrected and pooled with the exact
         training maxima
compare  full and fast on the same seeds, with divergences, threshold errors
         and speedup accounting

Every run returns a plain-dict report (see services.exports.validate_report).
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from services import nulldist
from services.errors import ConfigError
from services.exports import validate_report
from services.parallel_engine import chunked, execute_parallel_jobs
from services.permcore import (
    COLUMN_CHUNK,
    STREAM_RESIDUAL,
    EvaluationCounter,
    LabeledDataset,
    PermutationPlan,
    permutation_columns,
    permutation_maxima,
    subsampled_column,
    t_statistic,
    trial_seed,
)
from services.residual import ResidualModel, TrainingRecovery, apply_bias, fit_residual_model
from services.subspace import (
    RECOVERY_SCALES,
    SubspaceModel,
    load_bundle,
    make_mask,
    reconstruct_column,
    sample_count,
    save_bundle,
    train_basis,
)

logger = logging.getLogger(__name__)

MODES = ("full", "fast", "compare", "rmt")


# ─────────────────────────────────────────────
# CONFIGURATION
# ─────────────────────────────────────────────

@dataclass(frozen=True)
class RunConfig:
    data_path: Optional[str] = None
    label_path: Optional[str] = None
    mode: str = "fast"
    trial_count: int = Config.DEFAULT_TRIAL_COUNT
    training_trials: int = Config.DEFAULT_TRAINING_TRIALS
    rank: Optional[int] = None
    sampling_rate: float = Config.DEFAULT_SAMPLING_RATE
    training_rate: Optional[float] = None
    passes: int = Config.DEFAULT_PASSES
    basis_method: str = Config.DEFAULT_BASIS_METHOD
    recovery_scale: str = Config.DEFAULT_RECOVERY_SCALE
    cross_fit_folds: int = Config.CROSS_FIT_FOLDS
    bin_width: float = Config.DEFAULT_BIN_WIDTH
    alpha_levels: Tuple[float, ...] = Config.DEFAULT_ALPHA_LEVELS
    master_seed: int = Config.DEFAULT_MASTER_SEED
    mask_seed: int = Config.DEFAULT_MASK_SEED
    two_sided: bool = False
    two_sided_quantile: bool = False
    welch: bool = False
    strict: bool = False
    workers: Optional[int] = None
    bundle_in: Optional[str] = None
    bundle_out: Optional[str] = None
    sweep_rates: Tuple[float, ...] = ()
    sweep_repeats: int = Config.DEFAULT_SWEEP_REPEATS

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        """Build from an argparse namespace; flags left as None fall back to Config defaults."""
        values: Dict[str, Any] = {}
        for name in cls.__dataclass_fields__:
            value = getattr(args, name, None)
            if value is not None:
                values[name] = value
        if "alpha_levels" in values:
            values["alpha_levels"] = tuple(float(a) for a in values["alpha_levels"])
        if "sweep_rates" in values:
            values["sweep_rates"] = tuple(float(r) for r in values["sweep_rates"])
        return cls(**values)

    @property
    def effective_training_rate(self) -> float:
        return self.sampling_rate if self.training_rate is None else self.training_rate

    def resolved_workers(self) -> int:
        return Config.workers() if self.workers is None else max(1, int(self.workers))

    def resolve_rank(self, data: LabeledDataset) -> int:
        """Explicit rank, else the subject count capped at min(v, T0)."""
        if self.rank is not None:
            return int(self.rank)
        cap = min(data.subject_count, data.feature_count, self.training_trials)
        if cap < data.subject_count:
            logger.info(f"Default rank capped at {cap} (n={data.subject_count}, v={data.feature_count}, "
                        f"T0={self.training_trials})")
        return cap

    def validate(self, data: Optional[LabeledDataset] = None) -> "RunConfig":
        problems: List[str] = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.trial_count < 1:
            problems.append("trial_count must be >= 1")
        if not 0.0 < self.sampling_rate <= 1.0:
            problems.append(f"sampling_rate must lie in (0, 1], got {self.sampling_rate}")
        if self.training_rate is not None and not 0.0 < self.training_rate <= 1.0:
            problems.append(f"training_rate must lie in (0, 1], got {self.training_rate}")
        if any(not 0.0 < r <= 1.0 for r in self.sweep_rates):
            problems.append("sweep rates must lie in (0, 1]")
        if self.bin_width <= 0:
            problems.append("bin_width must be positive")
        if any(not 0.0 < a < 1.0 for a in self.alpha_levels):
            problems.append("alpha levels must lie in (0, 1)")
        if self.passes < 0:
            problems.append("passes must be >= 0")
        if self.basis_method not in ("svd", "grouse"):
            problems.append(f"unknown basis method {self.basis_method!r}")
        if self.recovery_scale not in RECOVERY_SCALES:
            problems.append(f"unknown recovery scale {self.recovery_scale!r}")
        if self.cross_fit_folds < 1:
            problems.append("cross_fit_folds must be >= 1")
        if self.sweep_repeats < 1:
            problems.append("sweep_repeats must be >= 1")
        if self.mode in ("fast", "compare"):
            if self.training_trials < 1 or self.training_trials > self.trial_count:
                problems.append(f"need 1 <= T0 <= T (T0={self.training_trials}, T={self.trial_count})")
            if data is not None:
                rank = self.resolve_rank(data)
                if rank < 1 or rank > self.training_trials:
                    problems.append(f"need T >= T0 >= r (T0={self.training_trials}, r={rank})")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["alpha_levels"] = list(self.alpha_levels)
        out["sweep_rates"] = list(self.sweep_rates)
        return out


def load_sweep_config(path: str) -> Dict[str, Any]:
    """Declarative spectral sweep config (JSON): v, t, lambdas, sigma2_grid, delta, draws, seed."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read sweep config {path}: {e}") from e
    missing = [key for key in ("v", "t", "lambdas", "sigma2_grid") if key not in payload]
    if missing:
        raise ConfigError(f"sweep config {path} missing {missing}")
    payload.setdefault("delta", 0.5)
    payload.setdefault("draws", 100)
    payload.setdefault("seed", 0)
    return payload


# ─────────────────────────────────────────────
# PHASE RESULTS
# ─────────────────────────────────────────────

@dataclass(eq=False)
class FastResult:
    null: nulldist.MaxNullDistribution
    naive: nulldist.MaxNullDistribution
    training_maxima: np.ndarray
    recovered_maxima: np.ndarray
    corrected_maxima: np.ndarray
    model: SubspaceModel
    residual: ResidualModel
    sample_size: int
    evaluations: int
    training_evaluations: int
    singular_trials: List[int] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    training_recovery: Optional[TrainingRecovery] = None


def _section(null: nulldist.MaxNullDistribution, config: RunConfig) -> Dict[str, Any]:
    summary = nulldist.null_summary(null, config.alpha_levels, config.two_sided_quantile)
    summary["histogram"] = nulldist.histogram_frame(null).to_dict("records")
    return summary


def _observed_section(observed: np.ndarray, null: nulldist.MaxNullDistribution,
                      config: RunConfig, thresholds: Dict[str, Optional[float]]) -> Dict[str, Any]:
    scored = np.abs(observed) if config.two_sided else observed
    pvals = nulldist.corrected_p_values(null, scored)
    significant = {
        alpha: (None if value is None else int(np.count_nonzero(scored >= value)))
        for alpha, value in thresholds.items()
    }
    return {
        "max_statistic": float(scored.max()),
        "p_value_max": nulldist.corrected_p_value(null, float(scored.max())),
        "min_p_value": float(pvals.min()),
        "significant_features": significant,
        "statistics": [float(x) for x in observed],
        "p_values": [float(x) for x in pvals],
    }


def _bonferroni(data: LabeledDataset, config: RunConfig) -> Dict[str, float]:
    n0, n1 = data.group_sizes
    return {
        f"{alpha:g}": nulldist.bonferroni_threshold(alpha, data.feature_count, n0, n1, config.two_sided)
        for alpha in config.alpha_levels
    }


def _base_report(mode: str, data: LabeledDataset, config: RunConfig) -> Dict[str, Any]:
    n0, n1 = data.group_sizes
    return {
        "schema_version": Config.REPORT_SCHEMA_VERSION,
        "mode": mode,
        "config": config.to_dict(),
        "seeds": {"master_seed": int(config.master_seed), "mask_seed": int(config.mask_seed)},
        "dataset": {"subjects": data.subject_count, "features": data.feature_count, "group_sizes": [n0, n1]},
        "timings": {},
        "evaluations": {},
    }


def _observed(data: LabeledDataset, config: RunConfig) -> Tuple[np.ndarray, int]:
    counter = EvaluationCounter()
    stat = t_statistic(data, equal_var=not config.welch, counter=counter)
    return stat, counter.count


# ─────────────────────────────────────────────
# FULL
# ─────────────────────────────────────────────

def full_maxima(data: LabeledDataset, config: RunConfig) -> Tuple[np.ndarray, int, float]:
    """Exact per-trial maxima, their evaluation count and wall-clock seconds."""
    plan = PermutationPlan(config.trial_count, config.master_seed)
    counter = EvaluationCounter()
    start = time.perf_counter()
    maxima = permutation_maxima(data, plan, workers=config.resolved_workers(), equal_var=not config.welch,
                                two_sided=config.two_sided, counter=counter)
    return maxima, counter.count, time.perf_counter() - start


def run_full(data: LabeledDataset, config: RunConfig) -> Dict[str, Any]:
    config.validate(data)
    logger.info(f"🔄 Full permutation run: v={data.feature_count}, T={config.trial_count}")
    report = _base_report("full", data, config)

    start = time.perf_counter()
    observed, observed_evals = _observed(data, config)
    report["timings"]["observed"] = time.perf_counter() - start

    maxima, evals, seconds = full_maxima(data, config)
    report["timings"]["permutation"] = seconds

    start = time.perf_counter()
    null = nulldist.build_null(maxima, config.bin_width)
    report["null"] = _section(null, config)
    report["timings"]["analysis"] = time.perf_counter() - start

    report["bonferroni"] = _bonferroni(data, config)
    report["observed"] = _observed_section(observed, null, config, report["null"]["thresholds"])
    report["evaluations"] = {
        "observed": observed_evals,
        "permutation": evals,
        "full_equivalent": data.feature_count * config.trial_count,
    }
    logger.info(f"✅ Full run done: {evals} statistic evaluations")
    return validate_report(report)


# ─────────────────────────────────────────────
# FAST
# ─────────────────────────────────────────────

def _recovery_job(trials: List[int], data: LabeledDataset, plan: PermutationPlan, mask, model: SubspaceModel,
                  residual: ResidualModel, config: RunConfig, counter: EvaluationCounter):
    recovered, naive, singular = [], [], []
    for t in trials:
        samples = subsampled_column(data, plan, t, mask.indices(t), equal_var=not config.welch, counter=counter)
        column = reconstruct_column(model, samples, residual, trial_seed(config.master_seed, t, STREAM_RESIDUAL),
                                    strict=config.strict)
        recovered.append(nulldist.column_max(column.estimate, config.two_sided))
        naive.append(nulldist.column_max(samples.values, config.two_sided))
        if column.singular:
            singular.append(t)
    return recovered, naive, singular


def _train(data: LabeledDataset, config: RunConfig, plan: PermutationPlan, mask, rank: int,
           counter: EvaluationCounter, timings: Dict[str, float]):
    T0 = config.training_trials
    start = time.perf_counter()
    P_train = permutation_columns(data, plan, range(T0), config.resolved_workers(),
                                  equal_var=not config.welch, counter=counter)
    timings["training_permutations"] = time.perf_counter() - start

    start = time.perf_counter()
    model = train_basis(P_train, rank, config.effective_training_rate, config.passes, seed=config.mask_seed,
                        method=config.basis_method, scale=config.recovery_scale, dof=data.subject_count - 2)
    timings["training_basis"] = time.perf_counter() - start

    start = time.perf_counter()
    residual, run = fit_residual_model(P_train, model, mask, config.master_seed, config.two_sided,
                                       folds=config.cross_fit_folds, passes=config.passes)
    timings["training_residual"] = time.perf_counter() - start

    naive_train = np.array([nulldist.column_max(P_train[mask.indices(t), t], config.two_sided) for t in range(T0)])
    return model, residual, run, naive_train


def _check_bundle(extra: Dict[str, Any], data: LabeledDataset, config: RunConfig, rate: float) -> None:
    expected = {
        "feature_count": data.feature_count,
        "training_trials": config.training_trials,
        "master_seed": int(config.master_seed),
        "mask_seed": int(config.mask_seed),
        "sampling_rate": float(rate),
        "two_sided": bool(config.two_sided),
        "welch": bool(config.welch),
        "recovery_scale": config.recovery_scale,
    }
    mismatched = {k: (extra.get(k), v) for k, v in expected.items() if extra.get(k) != v}
    if mismatched:
        raise ConfigError(f"training bundle does not match this run: {mismatched}")


def fast_null(data: LabeledDataset, config: RunConfig, rate: Optional[float] = None) -> FastResult:
    """Train, recover and bias-correct; returns the pooled null plus the naive baseline."""
    rate = config.sampling_rate if rate is None else float(rate)
    v, T, T0 = data.feature_count, config.trial_count, config.training_trials
    rank = config.resolve_rank(data)
    plan = PermutationPlan(T, config.master_seed)
    mask = make_mask(rate, v, T, config.mask_seed, rank)
    counter = EvaluationCounter()
    timings: Dict[str, float] = {}
    training_run: Optional[TrainingRecovery] = None

    if config.bundle_in:
        start = time.perf_counter()
        model, residual, extra = load_bundle(config.bundle_in)
        _check_bundle(extra, data, config, rate)
        if model.rank * Config.MIN_MULTIPLIER > mask.size:
            raise ConfigError(f"bundle rank {model.rank} needs more than {mask.size} samples per column")
        training_maxima = np.asarray(extra["training_maxima"], dtype=np.float64)
        naive_train = np.asarray(extra["training_naive_maxima"], dtype=np.float64)
        training_evals = int(extra["training_evaluations"])
        timings["bundle_load"] = time.perf_counter() - start
        logger.info(f"Loaded training bundle {config.bundle_in} (rank {model.rank})")
    else:
        logger.info(f"🔄 Training: T0={T0}, r={rank}, rate={config.effective_training_rate}")
        model, residual, training_run, naive_train = _train(data, config, plan, mask, rank, counter, timings)
        training_maxima = training_run.true_maxima
        training_evals = counter.count
        if config.bundle_out:
            save_bundle(config.bundle_out, model, residual, extra={
                "feature_count": v,
                "training_trials": T0,
                "master_seed": int(config.master_seed),
                "mask_seed": int(config.mask_seed),
                "sampling_rate": rate,
                "two_sided": bool(config.two_sided),
                "welch": bool(config.welch),
                "recovery_scale": config.recovery_scale,
                "training_maxima": [float(x) for x in training_maxima],
                "training_naive_maxima": [float(x) for x in naive_train],
                "training_evaluations": training_evals,
            })

    logger.info(f"🔄 Recovery: {T - T0} trials at rate {rate} ({mask.size} of {v} entries each)")
    start = time.perf_counter()
    parts = execute_parallel_jobs(
        chunked(range(T0, T), COLUMN_CHUNK),
        lambda chunk: _recovery_job(chunk, data, plan, mask, model, residual, config, counter),
        config.resolved_workers(),
    )
    recovered = np.array([m for part in parts for m in part[0]], dtype=np.float64)
    naive_rec = np.array([m for part in parts for m in part[1]], dtype=np.float64)
    singular = [t for part in parts for t in part[2]]
    timings["recovery"] = time.perf_counter() - start
    recovery_evals = counter.count if config.bundle_in else counter.count - training_evals
    if singular:
        logger.warning(f"⚠️ {len(singular)} recovery trial(s) used a minimum-norm fit")

    start = time.perf_counter()
    corrected = apply_bias(recovered, residual.bias_shift)
    null = nulldist.build_null(np.concatenate([training_maxima, corrected]), config.bin_width)
    naive = nulldist.build_null(np.concatenate([naive_train, naive_rec]), config.bin_width)
    timings["null"] = time.perf_counter() - start

    return FastResult(
        null=null, naive=naive, training_maxima=training_maxima, recovered_maxima=recovered,
        corrected_maxima=corrected, model=model, residual=residual, sample_size=mask.size,
        evaluations=training_evals + recovery_evals,
        training_evaluations=training_evals, singular_trials=singular, timings=timings,
        training_recovery=training_run,
    )


def _training_section(result: FastResult) -> Dict[str, Any]:
    section = result.model.diagnostics()
    section.update(result.residual.to_dict())
    section["singular_trials"] = list(result.singular_trials)
    section["sample_size"] = result.sample_size
    return section


def _fast_evaluations(data: LabeledDataset, config: RunConfig, result: FastResult, observed_evals: int):
    full_equivalent = data.feature_count * config.trial_count
    return {
        "observed": observed_evals,
        "training": result.training_evaluations,
        "recovery": result.evaluations - result.training_evaluations,
        "permutation": result.evaluations,
        "expected": data.feature_count * config.training_trials
        + result.sample_size * (config.trial_count - config.training_trials),
        "full_equivalent": full_equivalent,
        "evaluation_ratio": full_equivalent / result.evaluations,
    }


def run_fast(data: LabeledDataset, config: RunConfig) -> Dict[str, Any]:
    config.validate(data)
    report = _base_report("fast", data, config)
    start = time.perf_counter()
    observed, observed_evals = _observed(data, config)
    report["timings"]["observed"] = time.perf_counter() - start

    result = fast_null(data, config)
    report["timings"].update(result.timings)
    report["null"] = _section(result.null, config)
    report["naive_null"] = _section(result.naive, config)
    report["training"] = _training_section(result)
    report["bonferroni"] = _bonferroni(data, config)
    report["observed"] = _observed_section(observed, result.null, config, report["null"]["thresholds"])
    report["evaluations"] = _fast_evaluations(data, config, result, observed_evals)
    logger.info(f"✅ Fast run done: {result.evaluations} evaluations "
                f"({report['evaluations']['evaluation_ratio']:.1f}x fewer than full)")
    return validate_report(report)


# ─────────────────────────────────────────────
# COMPARE
# ─────────────────────────────────────────────

def compare_nulls(true_null: nulldist.MaxNullDistribution, fast: FastResult,
                  alpha_levels: Sequence[float], two_sided_quantile: bool = False) -> Dict[str, Any]:
    true_t = nulldist.thresholds(true_null, alpha_levels, two_sided_quantile)
    fast_t = nulldist.thresholds(fast.null, alpha_levels, two_sided_quantile)
    naive_t = nulldist.thresholds(fast.naive, alpha_levels, two_sided_quantile)

    def _err(a, b):
        return None if a is None or b is None else abs(a - b)

    return {
        "kl": nulldist.kl_divergence(true_null, fast.null),
        "bd": nulldist.bhattacharyya(true_null, fast.null),
        "naive_kl": nulldist.kl_divergence(true_null, fast.naive),
        "naive_bd": nulldist.bhattacharyya(true_null, fast.naive),
        "threshold_abs_error": {f"{a:g}": _err(true_t[a], fast_t[a]) for a in true_t},
        "naive_threshold_abs_error": {f"{a:g}": _err(true_t[a], naive_t[a]) for a in true_t},
        "true_thresholds": {f"{a:g}": v for a, v in true_t.items()},
    }


def run_compare(data: LabeledDataset, config: RunConfig) -> Dict[str, Any]:
    config.validate(data)
    report = _base_report("compare", data, config)
    start = time.perf_counter()
    observed, observed_evals = _observed(data, config)
    report["timings"]["observed"] = time.perf_counter() - start

    logger.info("🔄 Compare: exact permutation null")
    maxima, full_evals, full_seconds = full_maxima(data, config)
    true_null = nulldist.build_null(maxima, config.bin_width)
    report["timings"]["full"] = full_seconds

    logger.info("🔄 Compare: fast null on the same seeds")
    start = time.perf_counter()
    fast = fast_null(data, config)
    fast_seconds = time.perf_counter() - start
    report["timings"]["fast"] = fast_seconds
    report["timings"].update({f"fast_{k}": v for k, v in fast.timings.items()})

    report["null"] = _section(fast.null, config)
    report["true_null"] = _section(true_null, config)
    report["naive_null"] = _section(fast.naive, config)
    report["training"] = _training_section(fast)
    report["bonferroni"] = _bonferroni(data, config)
    report["observed"] = _observed_section(observed, fast.null, config, report["null"]["thresholds"])
    report["comparison"] = compare_nulls(true_null, fast, config.alpha_levels, config.two_sided_quantile)
    report["comparison"]["wall_clock_ratio"] = full_seconds / fast_seconds if fast_seconds > 0 else None
    evaluations = _fast_evaluations(data, config, fast, observed_evals)
    evaluations["full"] = full_evals
    evaluations["evaluation_ratio"] = full_evals / fast.evaluations
    report["evaluations"] = evaluations
    logger.info(f"✅ Compare done: KL={report['comparison']['kl']:.3g}, "
                f"naive KL={report['comparison']['naive_kl']:.3g}")
    return validate_report(report)


_SPREAD_SKIP = ("rate", "repeat", "mask_seed", "fast_evaluations", "evaluation_ratio")


def _summarize_rate(realizations: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Mean of every metric over the realizations, plus a sample sd column per metric."""
    frame = pd.DataFrame(realizations).drop(columns=["repeat", "mask_seed"])
    row: Dict[str, Any] = {"rate": float(frame["rate"].iloc[0]), "repeats": len(frame)}
    for column in frame.columns:
        if column == "rate":
            continue
        values = pd.to_numeric(frame[column], errors="coerce")
        if values.isna().any():
            row[column] = None
            if column not in _SPREAD_SKIP:
                row[f"{column}_sd"] = None
            continue
        row[column] = float(values.mean())
        if column not in _SPREAD_SKIP:
            row[f"{column}_sd"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    row["fast_evaluations"] = int(frame["fast_evaluations"].iloc[0])
    return row


def rate_sweep(data: LabeledDataset, config: RunConfig, rates: Optional[Sequence[float]] = None,
               repeats: Optional[int] = None) -> Dict[str, Any]:
    """
    Compare-mode rows over a list of sampling rates against one exact null.

    Each rate runs `repeats` mask realizations (mask_seed, mask_seed + 1, ...);
    a row carries the mean of every metric and its sample sd (`<metric>_sd`).
    The individual realizations are kept under "realizations".
    """
    rates = list(rates or config.sweep_rates or Config.DEFAULT_SWEEP_RATES)
    repeats = int(config.sweep_repeats if repeats is None else repeats)
    config = replace(config, sweep_repeats=repeats)
    config.validate(data)
    report = _base_report("sweep", data, config)
    maxima, full_evals, full_seconds = full_maxima(data, config)
    true_null = nulldist.build_null(maxima, config.bin_width)
    report["timings"]["full"] = full_seconds
    rank = config.resolve_rank(data)

    rows, realizations = [], []
    for rate in rates:
        if sample_count(rate, data.feature_count) < Config.MIN_MULTIPLIER * rank:
            logger.warning(f"⚠️ Skipping rate {rate}: below the {Config.MIN_MULTIPLIER} x rank sample floor")
            continue
        per_rate = []
        for repeat in range(repeats):
            mask_seed = int(config.mask_seed) + repeat
            cfg = replace(config, sampling_rate=float(rate), mask_seed=mask_seed, bundle_in=None, bundle_out=None)
            start = time.perf_counter()
            fast = fast_null(data, cfg)
            seconds = time.perf_counter() - start
            cmp = compare_nulls(true_null, fast, config.alpha_levels, config.two_sided_quantile)
            realization = {
                "rate": float(rate),
                "repeat": repeat,
                "mask_seed": mask_seed,
                "kl": cmp["kl"],
                "bd": cmp["bd"],
                "naive_kl": cmp["naive_kl"],
                "naive_bd": cmp["naive_bd"],
                "bias_shift": fast.residual.bias_shift,
                "sigma2": fast.residual.sigma2,
                "fast_evaluations": fast.evaluations,
                "evaluation_ratio": full_evals / fast.evaluations,
                "wall_clock_ratio": full_seconds / seconds if seconds > 0 else None,
            }
            for alpha, err in cmp["threshold_abs_error"].items():
                realization[f"threshold_error_{alpha}"] = err
            per_rate.append(realization)
            report["timings"][f"fast_{rate:g}_{repeat}"] = seconds
        realizations.extend(per_rate)
        rows.append(_summarize_rate(per_rate))
        logger.info(f"Rate {rate:g}: KL={rows[-1]['kl']:.3g} over {repeats} realization(s)")
    report["rows"] = rows
    report["realizations"] = realizations
    report["evaluations"] = {"full": full_evals}
    return validate_report(report)
