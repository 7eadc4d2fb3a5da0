# db_app.py - local run ledger (fresh SQLite connection per call)

import json
import logging
import sqlite3
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from config import Config

logger = logging.getLogger(__name__)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS runs (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    created_at TEXT NOT NULL,
    mode TEXT NOT NULL,
    subjects INTEGER,
    features INTEGER,
    trial_count INTEGER,
    sampling_rate REAL,
    master_seed INTEGER,
    mask_seed INTEGER,
    evaluations INTEGER,
    evaluation_ratio REAL,
    kl REAL,
    report_json TEXT NOT NULL
)
"""


def get_conn(db_path=None):
    """Create a fresh connection to the run ledger with WAL mode enabled."""
    if not db_path:
        db_path = Config.RUN_LEDGER_PATH

    conn = sqlite3.connect(db_path, timeout=30)
    conn.execute("PRAGMA journal_mode=WAL")
    conn.execute("PRAGMA busy_timeout=30000")
    conn.row_factory = sqlite3.Row
    conn.execute(_SCHEMA)
    return conn


def close_conn(conn):
    """Close a specific connection."""
    if conn:
        try:
            conn.close()
        except Exception:
            pass


def record_run(report: Dict[str, Any], db_path: Optional[str] = None) -> int:
    """Store one report; returns its ledger id."""
    config = report.get("config", {})
    dataset = report.get("dataset", {})
    evaluations = report.get("evaluations", {})
    comparison = report.get("comparison") or {}
    conn = get_conn(db_path)
    try:
        cur = conn.execute(
            """
            INSERT INTO runs (created_at, mode, subjects, features, trial_count, sampling_rate,
                              master_seed, mask_seed, evaluations, evaluation_ratio, kl, report_json)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (
                datetime.now(timezone.utc).isoformat(timespec="seconds"),
                report.get("mode"),
                dataset.get("subjects"),
                dataset.get("features"),
                config.get("trial_count"),
                config.get("sampling_rate"),
                report.get("seeds", {}).get("master_seed"),
                report.get("seeds", {}).get("mask_seed"),
                evaluations.get("permutation"),
                evaluations.get("evaluation_ratio"),
                comparison.get("kl"),
                json.dumps(report, sort_keys=True, default=str),
            ),
        )
        conn.commit()
        logger.info(f"Run recorded in ledger as #{cur.lastrowid}")
        return int(cur.lastrowid)
    finally:
        close_conn(conn)


def list_runs(limit: int = 20, db_path: Optional[str] = None) -> List[Dict[str, Any]]:
    """Most recent runs first, without the stored report body."""
    conn = get_conn(db_path)
    try:
        rows = conn.execute(
            """
            SELECT id, created_at, mode, subjects, features, trial_count, sampling_rate,
                   master_seed, mask_seed, evaluations, evaluation_ratio, kl
            FROM runs ORDER BY id DESC LIMIT ?
            """,
            (int(limit),),
        ).fetchall()
        return [dict(row) for row in rows]
    finally:
        close_conn(conn)


def get_report(run_id: int, db_path: Optional[str] = None) -> Optional[Dict[str, Any]]:
    conn = get_conn(db_path)
    try:
        row = conn.execute("SELECT report_json FROM runs WHERE id = ?", (int(run_id),)).fetchone()
        return json.loads(row["report_json"]) if row else None
    finally:
        close_conn(conn)
