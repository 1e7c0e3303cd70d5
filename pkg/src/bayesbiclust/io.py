"""Matrix files, data bundles and result documents.

Matrix files are tab-separated with a header row of column ids and a first
column of row ids. Cells hold categories ``1..L`` or binary ``0/1``; both
are stored 0-based in memory and the coding is recorded so files round-trip.

Result documents are JSON with sorted keys and no timestamps, so a rerun
with the same configuration and seed reproduces the file byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DataError, UsageError

SCHEMA_VERSION = "1"


@dataclass
class Matrix:
    values: np.ndarray          # uint8, 0-based categories
    row_ids: list
    col_ids: list
    coding: str = "1-based"     # or "binary01"
    n_categories: int = 2
    meta: dict = field(default_factory=dict)


def _read_tsv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    width = len(header)
    rows = []
    for ln_no, ln in enumerate(lines[1:], start=2):
        cells = ln.split("\t")
        if len(cells) != width:
            raise DataError(f"{path}: line {ln_no} has {len(cells)} fields, expected {width}")
        rows.append(cells)
    if not rows:
        raise DataError(f"{path}: header only, no data rows")
    df = pd.DataFrame([r[1:] for r in rows], index=[r[0] for r in rows], columns=header[1:])
    return df


def read_matrix(path) -> Matrix:
    """Read a categorical TSV matrix (see module docstring)."""
    df = _read_tsv(path)
    raw = df.to_numpy()
    try:
        vals = raw.astype(float) if raw.size else np.zeros(raw.shape)
    except ValueError:
        bad = next((i, j) for i in range(raw.shape[0]) for j in range(raw.shape[1])
                   if not _is_number(raw[i, j]))
        raise DataError(f"{path}: non-numeric cell at row {bad[0] + 1}, column {bad[1] + 1}"
                        f" ({raw[bad]!r})") from None
    if raw.shape[1] == 0:
        raise DataError(f"{path}: no data columns")
    frac = vals != np.round(vals)
    if frac.any():
        i, j = np.argwhere(frac)[0]
        raise DataError(f"{path}: non-integer cell at row {i + 1}, column {j + 1} ({raw[i, j]!r})")
    ints = vals.astype(np.int64)
    if ints.min() < 0:
        i, j = np.argwhere(ints < 0)[0]
        raise DataError(f"{path}: negative cell at row {i + 1}, column {j + 1}")
    if ints.min() == 0:
        if ints.max() > 1:
            i, j = np.argwhere(ints > 1)[0]
            raise DataError(f"{path}: 0 found, so cells must be binary 0/1, but row {i + 1},"
                            f" column {j + 1} holds {ints[i, j]}")
        coding, Y, L = "binary01", ints, 2
    else:
        coding, Y, L = "1-based", ints - 1, int(ints.max())
    if L < 2:
        raise DataError(f"{path}: only one category observed (L < 2)")
    if L > 255:
        raise DataError(f"{path}: at most 255 categories are supported")
    return Matrix(np.ascontiguousarray(Y, dtype=np.uint8), list(df.index), list(df.columns),
                  coding, L)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_matrix(path, values, row_ids=None, col_ids=None, coding="1-based"):
    """Write a 0-based matrix as TSV in the given coding."""
    values = np.asarray(values)
    n, p = values.shape
    row_ids = row_ids or [f"r{i + 1}" for i in range(n)]
    col_ids = col_ids or [f"c{j + 1}" for j in range(p)]
    if coding == "1-based":
        out = values.astype(np.int64) + 1
    elif coding == "binary01":
        out = values.astype(np.int64)
    else:
        raise UsageError(f"unknown coding {coding!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["id", *map(str, col_ids)]) + "\n")
        for rid, row in zip(row_ids, out):
            fh.write("\t".join([str(rid), *map(str, row.tolist())]) + "\n")


def read_real_matrix(path) -> pd.DataFrame:
    """TSV of real values (rows: genes or objects); blanks and NA become NaN."""
    df = _read_tsv(path)
    try:
        return df.replace({"": np.nan, "NA": np.nan, "NaN": np.nan}).astype(float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from None


def binarize(X, rule="nonzero", tau=None) -> np.ndarray:
    """0/1 matrix from reals.

    ``nonzero``: ``x != 0``; ``median``: ``x > median`` of the column (ties
    go down, so a constant column becomes all zeros); ``threshold``:
    ``x > tau``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("binarize expects a 2-D matrix")
    if rule == "nonzero":
        out = X != 0
    elif rule == "median":
        med = np.nanmedian(X, axis=0)
        const = np.nanmax(X, axis=0) == np.nanmin(X, axis=0)
        if const.any():
            warnings.warn(f"{int(const.sum())} constant column(s) binarized to all zeros",
                          RuntimeWarning, stacklevel=2)
        out = X > med
    elif rule == "threshold":
        if tau is None:
            raise UsageError("threshold rule needs tau")
        out = X > float(tau)
    else:
        raise UsageError(f"unknown binarization rule {rule!r}")
    return out.astype(np.uint8)


# ---------------------------------------------------------------------------
# Bundles: arrays plus a JSON metadata record in one .npz file
# ---------------------------------------------------------------------------

def save_bundle(path, meta: dict | None = None, **arrays):
    meta_s = json.dumps(meta or {}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, __meta__=np.frombuffer(meta_s.encode(), dtype=np.uint8),
                            **arrays)


def load_bundle(path):
    """Return ``(arrays, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
            meta = json.loads(z["__meta__"].tobytes().decode()) if "__meta__" in z.files else {}
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: not a readable bundle ({exc})") from None
    return arrays, meta


# ---------------------------------------------------------------------------
# Result documents
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def provenance(config: dict) -> dict:
    from . import __version__
    return {"package": "bayesbiclust", "version": __version__,
            "schema_version": SCHEMA_VERSION, "seed": config.get("seed"),
            "config_hash": config_hash(config), "config": _plain(config)}


def fit_document(res, config: dict, metrics: dict | None = None, coding=None) -> dict:
    """Result JSON body for a flat (non-tree) fit."""
    doc = {
        "model": res.model,
        "k_hat": int(res.k_hat),
        "k_values": [int(k) for k in res.k_values],
        "log_marginal": {str(k): v for k, v in res.log_marginal.items()},
        "log_prior_k": {str(k): v for k, v in res.log_prior_k.items()},
        "labels": np.asarray(res.labels).tolist(),
        "selection": np.asarray(res.selection, dtype=int).tolist(),
        "selection_prob": np.round(np.asarray(res.selection_prob, dtype=float), 10).tolist(),
        "provenance": provenance(config),
    }
    if coding is not None:
        doc["category_coding"] = coding
    if metrics is not None:
        doc["metrics"] = metrics
    return _plain(doc)


def dumps(doc: dict) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n"


def write_json(path, doc: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read JSON ({exc})") from None


def result_schema() -> dict:
    with resources.files(__package__).joinpath("schema/result.schema.json").open() as fh:
        return json.load(fh)


def validate_result(doc: dict):
    import jsonschema
    try:
        jsonschema.validate(doc, result_schema())
    except jsonschema.ValidationError as exc:
        raise DataError(f"result document does not match the schema: {exc.message}") from None
