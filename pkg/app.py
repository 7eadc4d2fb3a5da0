# app.py - command-line entry point
import argparse
import json
import logging
import sys
import time
from typing import List, Optional

from config import Config
from services.errors import PermFwerError

logger = logging.getLogger("permfwer")

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s]: %(message)s"


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    # ---- Logging ----
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S", stream=sys.stderr, force=True)
    if Config.LOG_FILE:
        fh = logging.FileHandler(Config.LOG_FILE, encoding="utf-8")
        fh.setLevel(logging.WARNING)
        fh.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(fh)
    logging.captureWarnings(True)


# ─────────────────────────────────────────────
# PARSER
# ─────────────────────────────────────────────

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", dest="data_path", required=True, help="CSV or .bin subjects x features matrix")
    p.add_argument("--labels", dest="label_path", help="label file (omit if the CSV has a 'label' column)")
    p.add_argument("--trials", dest="trial_count", type=int, help=f"T (default {Config.DEFAULT_TRIAL_COUNT})")
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.add_argument("--alpha", dest="alpha_levels", type=float, nargs="+")
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--two-sided", dest="two_sided", action="store_true", default=None,
                   help="use max |t| per trial")
    p.add_argument("--two-sided-quantile", dest="two_sided_quantile", action="store_true", default=None,
                   help="threshold at the 1 - alpha/2 quantile")
    p.add_argument("--welch", action="store_true", default=None, help="Welch t instead of pooled variance")
    _add_output_flags(p)


def _add_fast_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--training-trials", dest="training_trials", type=int)
    p.add_argument("--rank", type=int, help="basis rank (default: number of subjects)")
    p.add_argument("--rate", dest="sampling_rate", type=float)
    p.add_argument("--training-rate", dest="training_rate", type=float)
    p.add_argument("--passes", type=int)
    p.add_argument("--basis-method", dest="basis_method", choices=["svd", "grouse"])
    p.add_argument("--recovery-scale", dest="recovery_scale", choices=["statistic", "correlation"],
                   help=f"scale of the low-rank fit (default {Config.DEFAULT_RECOVERY_SCALE})")
    p.add_argument("--folds", dest="cross_fit_folds", type=int,
                   help=f"held-out folds for the residual model (default {Config.CROSS_FIT_FOLDS}; 1 = in-sample)")
    p.add_argument("--mask-seed", dest="mask_seed", type=int)
    p.add_argument("--strict", action="store_true", default=None, help="fail on rank-deficient fits")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", "-o", help="JSON report path (default: stdout)")
    p.add_argument("--csv-dir", help="directory for CSV tables")
    p.add_argument("--xlsx", help="Excel workbook path")
    p.add_argument("--pdf", help="PDF summary path")
    p.add_argument("--record", action="store_true", help="store the report in the run ledger")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permfwer",
                                     description="FWER max-null estimation by permutation testing "
                                                 "with low-rank completion")
    parser.add_argument("--verbose", "-v", action="store_true")
    parser.add_argument("--quiet", "-q", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("full", help="exact permutation test")
    _add_run_flags(p)

    p = sub.add_parser("fast", help="training + subsampled recovery")
    _add_run_flags(p)
    _add_fast_flags(p)
    p.add_argument("--bundle-in", dest="bundle_in", help="reuse a saved training bundle")
    p.add_argument("--bundle-out", dest="bundle_out", help="save the training bundle (.npz)")

    p = sub.add_parser("compare", help="full vs fast on the same seeds")
    _add_run_flags(p)
    _add_fast_flags(p)
    p.add_argument("--sweep", dest="sweep_rates", type=float, nargs="*",
                   help="compare at several rates (no values: 20 rates from 0.1%% to 10%%)")
    p.add_argument("--repeats", dest="sweep_repeats", type=int,
                   help="mask realizations per sweep rate (mean and sd reported)")

    p = sub.add_parser("rmt", help="spectral validation sweep")
    p.add_argument("--config", dest="sweep_config", help="JSON sweep config")
    p.add_argument("--v", type=int, default=200)
    p.add_argument("--t", type=int, default=20000)
    p.add_argument("--lambdas", type=float, nargs="+", default=[1e6, 8e5, 6e5, 4e5, 2e5])
    p.add_argument("--sigma2", type=float, nargs="+", default=[1.0])
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)

    p = sub.add_parser("synth", help="write a synthetic low-rank-plus-noise dataset")
    p.add_argument("--subjects", type=int, default=30)
    p.add_argument("--features", type=int, default=5000)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--loading-scale", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--effect-size", type=float, default=0.0)
    p.add_argument("--effect-features", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV or .bin path")
    p.add_argument("--labels-out", help="separate label file (required for .bin)")

    p = sub.add_parser("history", help="list recorded runs")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--ledger", help="ledger database path")
    return parser


# ─────────────────────────────────────────────
# COMMANDS
# ─────────────────────────────────────────────

def _emit(report: dict, args) -> None:
    from services import exports

    text = exports.report_to_json(report)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        logger.info(f"✅ Report written to {args.output}")
    else:
        sys.stdout.write(text + "\n")
    if args.csv_dir:
        exports.write_csv_tables(report, args.csv_dir)
    if args.xlsx:
        exports.write_bytes(args.xlsx, exports.report_to_excel_bytes(report))
    if args.pdf:
        exports.write_bytes(args.pdf, exports.report_to_pdf_bytes(report))
    if args.record or Config.RUN_LEDGER_ENABLED:
        from db_app import record_run
        record_run(report)


def _run_data_command(args) -> int:
    from services import pipeline
    from services.datafiles import ingest

    data = ingest(args.data_path, args.label_path)
    config = pipeline.RunConfig.from_args(argparse.Namespace(**{**vars(args), "mode": args.command}))
    if args.command == "full":
        report = pipeline.run_full(data, config)
    elif args.command == "fast":
        report = pipeline.run_fast(data, config)
    elif getattr(args, "sweep_rates", None) is not None:
        report = pipeline.rate_sweep(data, config, args.sweep_rates or None)
    else:
        report = pipeline.run_compare(data, config)
    _emit(report, args)
    return 0


def _run_rmt(args) -> int:
    from services import rmt
    from services.pipeline import load_sweep_config

    if args.sweep_config:
        sweep = load_sweep_config(args.sweep_config)
    else:
        sweep = {"v": args.v, "t": args.t, "lambdas": args.lambdas, "sigma2_grid": args.sigma2,
                 "delta": args.delta, "draws": args.draws, "seed": args.seed}
    start = time.perf_counter()
    frame = rmt.run_sweep(sweep, workers=Config.workers())
    lo, hi = rmt.mp_support(1.0, int(sweep["v"]), int(sweep["t"]))
    report = {
        "schema_version": Config.REPORT_SCHEMA_VERSION,
        "mode": "rmt",
        "config": sweep,
        "seeds": {"seed": int(sweep.get("seed", 0))},
        "dataset": {"v": int(sweep["v"]), "t": int(sweep["t"])},
        "timings": {"sweep": time.perf_counter() - start},
        "evaluations": {},
        "mp_support_unit_variance": [lo, hi],
        "rows": frame.to_dict("records"),
    }
    _emit(report, args)
    return 0


def _run_synth(args) -> int:
    from services.datafiles import write_dataset
    from services.synthetic import generate_dataset

    data = generate_dataset(args.subjects, args.features, rank=args.rank, loading_scale=args.loading_scale,
                            noise_sd=args.noise_sd, effect_size=args.effect_size,
                            effect_features=args.effect_features, seed=args.seed)
    write_dataset(data, args.out, args.labels_out)
    logger.info(f"✅ Synthetic dataset written to {args.out}")
    return 0


def _run_history(args) -> int:
    from db_app import list_runs

    runs = list_runs(args.limit, args.ledger)
    print("=" * 78)
    print(f"{'ID':<5} | {'CREATED':<25} | {'MODE':<8} | {'V':<8} | {'T':<6} | {'RATE':<7} | {'RATIO'}")
    print("-" * 78)
    for r in runs:
        rate = "" if r["sampling_rate"] is None else f"{r['sampling_rate']:g}"
        ratio = "" if r["evaluation_ratio"] is None else f"{r['evaluation_ratio']:.1f}x"
        print(f"{r['id']:<5} | {r['created_at']:<25} | {r['mode']:<8} | {r['features'] or '':<8} | "
              f"{r['trial_count'] or '':<6} | {rate:<7} | {ratio}")
    print("=" * 78)
    return 0


COMMANDS = {
    "full": _run_data_command,
    "fast": _run_data_command,
    "compare": _run_data_command,
    "rmt": _run_rmt,
    "synth": _run_synth,
    "history": _run_history,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except PermFwerError as e:
        logger.error(f"❌ {e.category}: {e}")
        sys.stderr.write(json.dumps({"error": e.category, "message": str(e)}) + "\n")
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.error(f"❌ {e}")
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
