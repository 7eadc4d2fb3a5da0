# services/datafiles.py - dataset ingest and the flat binary matrix format
"""
Two on-disk formats for subject × feature matrices:

CSV     rows are subjects, columns are features; an optional header row;
        labels either embedded as a `label` column or in a separate file.
binary  32-byte little-endian header then the raw row-major matrix:
            magic   4s   b"PFWM"
            version u2
            dtype   u2   (1 = float64, 2 = float32, 3 = int8)
            rows    u8
            cols    u8
            pad     8x
"""
import logging
import os
import struct
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from services.errors import DimensionMismatch, ParseError
from services.permcore import LabeledDataset

logger = logging.getLogger(__name__)

MAGIC = b"PFWM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQQ8x")
DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("i1")}
DTYPE_LOOKUP = {v: k for k, v in DTYPE_CODES.items()}
BINARY_EXTENSIONS = (".bin", ".pfwm")

_INF_TOKENS = {"inf": np.inf, "+inf": np.inf, "-inf": -np.inf, "infinity": np.inf, "-infinity": -np.inf}
_NON_FINITE_TOKENS = ["nan", *_INF_TOKENS]


def is_binary_path(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in BINARY_EXTENSIONS


# ─────────────────────────────────────────────
# BINARY
# ─────────────────────────────────────────────

def write_matrix(path: str, matrix: np.ndarray) -> None:
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
    if dtype not in DTYPE_LOOKUP:
        arr = arr.astype("<f8")
        dtype = arr.dtype
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_LOOKUP[dtype], arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))


def read_matrix(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER.size)
            if len(head) < HEADER.size:
                raise ParseError(f"{path}: truncated header ({len(head)} bytes)")
            magic, version, code, rows, cols = HEADER.unpack(head)
            if magic != MAGIC:
                raise ParseError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise ParseError(f"{path}: unsupported format version {version}")
            if code not in DTYPE_CODES:
                raise ParseError(f"{path}: unknown dtype code {code}")
            dtype = DTYPE_CODES[code]
            data = np.frombuffer(fh.read(), dtype=dtype)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    if data.size != rows * cols:
        raise ParseError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).copy()


# ─────────────────────────────────────────────
# CSV
# ─────────────────────────────────────────────

def _read_csv_frame(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise ParseError(f"file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot parse {path}: {e}") from e
    head = frame.iloc[0].str.strip().str.lower()
    if (pd.to_numeric(head, errors="coerce").isna() & ~head.isin(_NON_FINITE_TOKENS)).any():
        frame.columns = [str(c).strip() for c in frame.iloc[0]]
        frame = frame.iloc[1:].reset_index(drop=True)
    return frame


def _numeric(frame: pd.DataFrame, path: str) -> np.ndarray:
    """Strings to float64; nan/inf tokens survive so validation can locate them."""
    tokens = frame.apply(lambda col: col.str.strip().str.lower())
    converted = tokens.apply(pd.to_numeric, errors="coerce")
    bad = (converted.isna() & ~tokens.isin(_NON_FINITE_TOKENS)).to_numpy()
    if bad.any():
        row, col = (int(x) for x in np.argwhere(bad)[0])
        raise ParseError(f"{path}: non-numeric entry {frame.iat[row, col]!r} at row {row}, column {col}")
    out = converted.to_numpy(dtype=np.float64)
    for token, value in _INF_TOKENS.items():
        out[(tokens == token).to_numpy()] = value
    return out


def read_labels(path: str) -> np.ndarray:
    if is_binary_path(path):
        return read_matrix(path).ravel()
    values = _numeric(_read_csv_frame(path), path)
    return values.ravel()


def read_values(path: str, label_column: str = "label") -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Value matrix plus embedded labels when the CSV header names a `label_column`."""
    if is_binary_path(path):
        return read_matrix(path).astype(np.float64), None
    frame = _read_csv_frame(path)
    labels = None
    if label_column in frame.columns:
        labels = _numeric(frame[[label_column]], path).ravel()
        frame = frame.drop(columns=[label_column])
    return _numeric(frame, path), labels


def ingest(data_path: str, label_path: Optional[str] = None, label_column: str = "label") -> LabeledDataset:
    values, labels = read_values(data_path, label_column)
    if label_path:
        labels = read_labels(label_path)
    if labels is None:
        raise ParseError(f"{data_path}: no labels given and no '{label_column}' column present")
    if labels.shape[0] != values.shape[0]:
        raise DimensionMismatch(f"labels length {labels.shape[0]} != value rows {values.shape[0]}")
    if np.any(labels != np.round(labels)):
        raise ParseError("labels must be integers 0 or 1")
    dataset = LabeledDataset(values=values, labels=labels.astype(np.int64))
    logger.info(f"Ingested {data_path}: n={dataset.subject_count}, v={dataset.feature_count}, "
                f"groups={dataset.group_sizes}")
    return dataset


def write_dataset(dataset: LabeledDataset, data_path: str, label_path: Optional[str] = None) -> None:
    """CSV (labels embedded unless label_path is given) or binary (label_path required)."""
    if is_binary_path(data_path):
        if not label_path:
            raise ValueError("binary datasets need a separate label file")
        write_matrix(data_path, dataset.values)
        if is_binary_path(label_path):
            write_matrix(label_path, dataset.labels.astype("i1"))
        else:
            pd.DataFrame({"label": dataset.labels}).to_csv(label_path, index=False)
        return
    frame = pd.DataFrame(dataset.values, columns=[f"f{i}" for i in range(dataset.feature_count)])
    if label_path:
        frame.to_csv(data_path, index=False, float_format="%.17g")
        pd.DataFrame({"label": dataset.labels}).to_csv(label_path, index=False)
    else:
        frame.insert(0, "label", dataset.labels)
        frame.to_csv(data_path, index=False, float_format="%.17g")
