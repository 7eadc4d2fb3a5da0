# config.py - PERMUTATION FWER EDITION
import os
from dotenv import load_dotenv

BASE_DIR = os.path.dirname(os.path.abspath(__file__))

# ✅ Ensure .env is loaded immediately when config.py is imported
load_dotenv()


def _get_bool(name: str, default: str = "False") -> bool:
    """Read an environment variable as a boolean."""
    value = os.getenv(name, default)
    return str(value).strip().lower() in ("true", "1", "yes", "y")


def _get_int(name: str, default: int) -> int:
    """Read an environment variable as an int, falling back on junk."""
    raw = os.getenv(name)
    if raw is None or not str(raw).strip():
        return default
    try:
        return int(str(raw).strip())
    except ValueError:
        return default


class Config:
    # ---- Permutation trials ----
    DEFAULT_TRIAL_COUNT = 2000
    DEFAULT_TRAINING_TRIALS = 100      # fully sampled trials used for training
    DEFAULT_PASSES = 3                 # training passes over the training block
    CONVERGENCE_TOL = 1e-4             # captured-energy gain that ends training early

    # ---- Recovery ----
    DEFAULT_SAMPLING_RATE = 0.005
    MIN_MULTIPLIER = 3                 # |Omega_t| >= MIN_MULTIPLIER * rank
    DEFAULT_BASIS_METHOD = "svd"
    DEFAULT_RECOVERY_SCALE = "correlation"   # low-rank fit on r = t / sqrt(t^2 + n - 2)
    CROSS_FIT_FOLDS = 5                # held-out folds for sigma2 and the bias shift

    # ---- Null distribution ----
    DEFAULT_BIN_WIDTH = 0.01
    DEFAULT_ALPHA_LEVELS = (0.05, 0.01, 0.005, 0.001)

    # 20 log-spaced rates between 0.1% and 10% for compare sweeps
    DEFAULT_SWEEP_RATES = tuple(
        round(0.001 * (100.0 ** (i / 19)), 6) for i in range(20)
    )
    DEFAULT_SWEEP_REPEATS = 1          # mask realizations per sweep rate

    # ---- Seeds ----
    DEFAULT_MASTER_SEED = 20140601
    DEFAULT_MASK_SEED = 7

    # ---- Workers (the only env override honoured at run time) ----
    WORKERS = max(1, _get_int("PERMFWER_WORKERS", 1))

    # ---- Logging ----
    LOG_LEVEL = os.getenv("PERMFWER_LOG_LEVEL", "INFO").upper()
    LOG_FILE = os.getenv("PERMFWER_LOG_FILE", "")

    # ---- Local run ledger (SQLite) ----
    RUN_LEDGER_PATH = os.getenv(
        "PERMFWER_LEDGER_PATH",
        os.path.join(BASE_DIR, "runs.db"),
    )
    RUN_LEDGER_ENABLED = _get_bool("PERMFWER_LEDGER_ENABLED", "False")

    # ---- Report schema ----
    REPORT_SCHEMA_VERSION = 1
    BUNDLE_FORMAT_VERSION = 1

    @classmethod
    def workers(cls) -> int:
        """Re-read the worker override so tests can monkeypatch the env."""
        return max(1, _get_int("PERMFWER_WORKERS", cls.WORKERS))
