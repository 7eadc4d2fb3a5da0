import json
import logging

import pytest

import app
from config import Config


@pytest.fixture(autouse=True)
def _restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)
    logging.captureWarnings(False)


def _last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.fixture
def dataset_csv(tmp_path):
    path = str(tmp_path / "data.csv")
    assert app.main(["-q", "synth", "--subjects", "10", "--features", "60", "--rank", "2", "--seed", "4",
                     "--out", path]) == 0
    return path


def test_full_to_file_and_tables(dataset_csv, tmp_path):
    out = tmp_path / "full.json"
    tables = tmp_path / "tables"
    code = app.main(["-q", "full", "--data", dataset_csv, "--trials", "20", "-o", str(out),
                     "--csv-dir", str(tables), "--seed", "1"])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["mode"] == "full"
    assert report["null"]["trial_count"] == 20
    assert (tables / "thresholds.csv").exists()


def test_fast_to_stdout(dataset_csv, capsys):
    code = app.main(["-q", "fast", "--data", dataset_csv, "--trials", "40", "--training-trials", "10",
                     "--rate", "0.5"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["evaluations"]["permutation"] == 60 * 10 + 30 * 30
    assert report["training"]["rank"] == 10


def test_compare_sweep(dataset_csv, capsys):
    code = app.main(["-q", "compare", "--data", dataset_csv, "--trials", "30", "--training-trials", "10",
                     "--rank", "2", "--sweep", "0.5", "1.0"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mode"] == "sweep"
    assert [row["rate"] for row in report["rows"]] == [0.5, 1.0]


def test_compare_sweep_repeats_and_recovery_flags(dataset_csv, capsys):
    code = app.main(["-q", "compare", "--data", dataset_csv, "--trials", "30", "--training-trials", "10",
                     "--rank", "2", "--sweep", "0.5", "--repeats", "3", "--recovery-scale", "statistic",
                     "--folds", "2"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["recovery_scale"] == "statistic"
    assert report["config"]["cross_fit_folds"] == 2
    assert report["rows"][0]["repeats"] == 3
    assert "kl_sd" in report["rows"][0]
    assert [r["mask_seed"] - report["seeds"]["mask_seed"] for r in report["realizations"]] == [0, 1, 2]


def test_rmt_sweep(tmp_path):
    out = tmp_path / "rmt.json"
    code = app.main(["-q", "rmt", "--v", "20", "--t", "2000", "--lambdas", "1e4", "--sigma2", "1.0", "50.0",
                     "--draws", "2", "-o", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert [row["sigma2"] for row in report["rows"]] == [1.0, 50.0]
    assert report["rows"][0]["premise"] is True


def test_config_error_exit_code(dataset_csv, capsys):
    code = app.main(["-q", "fast", "--data", dataset_csv, "--trials", "20", "--training-trials", "50"])
    assert code == 2
    assert _last_error(capsys)["error"] == "ConfigError"


def test_insufficient_samples_exit_code(dataset_csv, capsys):
    code = app.main(["-q", "fast", "--data", dataset_csv, "--trials", "40", "--training-trials", "10",
                     "--rate", "0.01"])
    assert code == 12
    assert _last_error(capsys)["error"] == "InsufficientSamples"


def test_degenerate_labels_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("label,a,b\n1,1,2\n1,2,3\n1,3,1\n")
    assert app.main(["-q", "full", "--data", str(path), "--trials", "5"]) == 10
    assert _last_error(capsys)["error"] == "DegenerateLabels"


def test_dimension_mismatch_exit_code(dataset_csv, tmp_path, capsys):
    labels = tmp_path / "labels.csv"
    labels.write_text("label\n0\n1\n")
    assert app.main(["-q", "full", "--data", dataset_csv, "--labels", str(labels), "--trials", "5"]) == 21
    error = _last_error(capsys)
    assert error["error"] == "DimensionMismatch"
    assert "2 != value rows 10" in error["message"]


def test_missing_file_exit_code(tmp_path, capsys):
    assert app.main(["-q", "full", "--data", str(tmp_path / "none.csv")]) == 20
    assert _last_error(capsys)["error"] == "ParseError"


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        app.main(["nonsense"])


def test_record_and_history(dataset_csv, tmp_path, monkeypatch, capsys):
    ledger = str(tmp_path / "runs.db")
    monkeypatch.setattr(Config, "RUN_LEDGER_PATH", ledger)
    assert app.main(["-q", "full", "--data", dataset_csv, "--trials", "10", "--record"]) == 0
    capsys.readouterr()
    assert app.main(["-q", "history", "--ledger", ledger]) == 0
    listing = capsys.readouterr().out
    assert "full" in listing
    assert "60" in listing
