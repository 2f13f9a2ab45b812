"""CSV and JSON file formats plus run manifests.

Matrices are CSV with a header row of column labels and a first column of
row labels. Floats are written with ``repr`` so a save/load round trip is
exact and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .factorization import CountMatrix
from .imputation import TreatmentVector

__all__ = [
    "load_count_matrix",
    "save_matrix",
    "load_matrix",
    "load_treatment",
    "save_treatment",
    "load_pool",
    "write_table",
    "write_json",
    "file_sha256",
    "build_manifest",
    "format_value",
]

FORMAT_VERSION = 1


def format_value(x) -> str:
    if isinstance(x, (str, bytes)):
        return x if isinstance(x, str) else x.decode()
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def _read_rows(path) -> list[list[str]]:
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataValidationError(f"{path}: file is empty")
    return rows


def load_matrix(path) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Parse a labeled numeric matrix; returns (values, row labels, column labels).

    "NA" cells parse as NaN; no other validation beyond well-formedness.
    """
    rows = _read_rows(path)
    header = rows[0]
    cols = tuple(header[1:])
    if not cols:
        raise DataValidationError(f"{path}: header has no column labels")
    labels = []
    values = np.empty((len(rows) - 1, len(cols)))
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != len(header):
            raise DataValidationError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
        labels.append(row[0])
        for c, cell in enumerate(row[1:]):
            cell = cell.strip()
            try:
                values[r, c] = float("nan") if cell == "NA" else float(cell)
            except ValueError:
                raise DataValidationError(
                    f"{path}: non-numeric entry {cell!r} at row {row[0]!r} (line {line}), column {cols[c]!r}"
                ) from None
    if values.shape[0] == 0:
        raise DataValidationError(f"{path}: no data rows")
    return values, tuple(labels), cols


def load_count_matrix(path) -> CountMatrix:
    """Load a D x N data matrix, rejecting negative or missing entries by coordinate."""
    values, rows, cols = load_matrix(path)
    bad = ~np.isfinite(values) | (values < 0)
    if bad.any():
        d, i = np.argwhere(bad)[0]
        what = "negative" if np.isfinite(values[d, i]) else "missing or non-finite"
        raise DataValidationError(
            f"{path}: {what} entry {format_value(values[d, i])} at row {rows[d]!r} (line {d + 2}), column {cols[i]!r}"
        )
    try:
        return CountMatrix(values, rows, cols)
    except DataValidationError as exc:
        raise DataValidationError(f"{path}: {exc}") from None


def save_matrix(path, values, row_labels, col_labels, corner: str = "") -> None:
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != (len(row_labels), len(col_labels)):
        raise DataValidationError(
            f"matrix shape {values.shape} does not match {len(row_labels)} x {len(col_labels)} labels"
        )
    rows = [[corner, *col_labels]]
    rows += [[label, *(format_value(x) for x in values[d])] for d, label in enumerate(row_labels)]
    _write_rows(path, rows)


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(rows)


def load_treatment(path, subjects=None) -> TreatmentVector:
    """Read a ``subject,treatment`` CSV, reordered to ``subjects`` when given."""
    rows = _read_rows(path)
    if [h.strip() for h in rows[0][:2]] != ["subject", "treatment"]:
        raise DataValidationError(f"{path}: header must be 'subject,treatment'")
    labels, values = [], []
    for r, row in enumerate(rows[1:]):
        if len(row) != 2:
            raise DataValidationError(f"{path}: line {r + 2} must have 2 fields")
        cell = row[1].strip()
        if cell not in ("0", "1"):
            raise DataValidationError(f"{path}: treatment {cell!r} for subject {row[0]!r} (line {r + 2}) is not 0 or 1")
        labels.append(row[0])
        values.append(int(cell))
    if len(set(labels)) != len(labels):
        dup = next(x for x in labels if labels.count(x) > 1)
        raise DataValidationError(f"{path}: duplicate subject {dup!r}")
    if subjects is None:
        return TreatmentVector(np.array(values))
    lookup = dict(zip(labels, values))
    missing = [s for s in subjects if s not in lookup]
    if missing:
        raise DataValidationError(f"{path}: no treatment for subject {missing[0]!r}")
    extra = sorted(set(labels) - set(subjects))
    if extra:
        raise DataValidationError(f"{path}: subject {extra[0]!r} is not in the count matrix")
    return TreatmentVector(np.array([lookup[s] for s in subjects]))


def save_treatment(path, t, subjects) -> None:
    t = t.t if isinstance(t, TreatmentVector) else np.asarray(t)
    _write_rows(path, [["subject", "treatment"], *([s, str(int(x))] for s, x in zip(subjects, t))])


def load_pool(path) -> np.ndarray:
    """Pool of latent vectors: one row per vector, one column per factor, header row of factor names."""
    rows = _read_rows(path)
    k = len(rows[0])
    out = np.empty((len(rows) - 1, k))
    for r, row in enumerate(rows[1:]):
        if len(row) != k:
            raise DataValidationError(f"{path}: line {r + 2} has {len(row)} fields, expected {k}")
        try:
            out[r] = [float(x) for x in row]
        except ValueError:
            raise DataValidationError(f"{path}: non-numeric entry on line {r + 2}") from None
    if out.shape[0] == 0:
        raise DataValidationError(f"{path}: pool is empty")
    if not np.isfinite(out).all() or (out < 0).any():
        raise DataValidationError(f"{path}: pool entries must be finite and nonnegative")
    return out


def write_table(path, header, rows) -> None:
    """Tidy CSV with a header row; values formatted like matrix entries."""
    _write_rows(path, [list(header), *([format_value(x) for x in row] for row in rows)])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, Path):
        return str(x)
    return x


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, params: dict, inputs: dict, version: str) -> dict:
    """Run manifest: command, parameters, input file digests and a hash of all of them.

    Input paths are recorded by file name only, so moving the inputs does not
    change the manifest. No timestamps or host details are included.
    """
    digests = {name: {"file": os.path.basename(str(p)), "sha256": file_sha256(p)} for name, p in inputs.items() if p}
    body = {
        "command": command,
        "params": _jsonable(params),
        "inputs": digests,
        "tool_version": version,
        "format_version": FORMAT_VERSION,
    }
    body["config_hash"] = hashlib.sha256(canonical_json(body).encode()).hexdigest()
    return body
