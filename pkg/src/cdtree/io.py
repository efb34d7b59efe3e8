"""CSV ingestion and canonical JSON.

Canonical JSON sorts object keys, writes floats with 17 significant digits
(``%.17g``) and non-finite floats as ``null``, so that loading a document and
writing it again reproduces the same bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from cdtree.core import Dataset
from cdtree.errors import DataError

SCHEMA_VERSION = 1


# ---------------------------------------------------------------- CSV

def read_csv(path, outcome: str, treatment: str, covariates=None, id_column=None) -> Dataset:
    """Load a header-first CSV into a :class:`Dataset`.

    Every column other than the outcome, treatment and id columns is a
    covariate unless ``covariates`` names a subset. Empty, non-numeric or
    non-finite cells raise :class:`DataError` with their row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (a header row is required)") from None
        rows = list(reader)
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for col in (outcome, treatment) + ((id_column,) if id_column else ()):
        if col not in header:
            raise DataError(f"{path}: column {col!r} not found in header {header}")
    reserved = {outcome, treatment, id_column}
    if covariates:
        missing = [c for c in covariates if c not in header]
        if missing:
            raise DataError(f"{path}: covariate columns not found: {missing}")
        cov = list(covariates)
    else:
        cov = [c for c in header if c not in reserved]
    if not cov:
        raise DataError(f"{path}: no covariate columns")
    index = {c: k for k, c in enumerate(header)}
    rows = [r for r in rows if any(cell.strip() for cell in r)]

    def column(name: str) -> np.ndarray:
        k = index[name]
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            line = i + 2  # 1-based with the header on line 1
            if k >= len(r):
                raise DataError(f"{path}: row {line} has {len(r)} fields, expected "
                                f"{len(header)}")
            cell = r[k].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {line}, "
                                f"column {name!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value {cell!r} at row {line}, "
                                f"column {name!r}")
            out[i] = v
        return out

    z = column(treatment)
    bad = np.flatnonzero((z != 0) & (z != 1))
    if bad.size:
        raise DataError(f"{path}: treatment column {treatment!r} must be 0/1; found "
                        f"{z[bad[0]]:g} at row {bad[0] + 2}")
    y = column(outcome)
    x = np.column_stack([column(c) for c in cov]) if rows else np.empty((0, len(cov)))
    ids = tuple(r[index[id_column]].strip() for r in rows) if id_column else ()
    return Dataset(x, z.astype(np.int64), y, tuple(cov), ids)


def write_csv(path, data: Dataset, outcome: str = "Y", treatment: str = "Z") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.feature_names) + [treatment, outcome])
        for i in range(data.n):
            w.writerow([repr(float(v)) for v in data.x[i]] + [int(data.z[i]),
                                                             repr(float(data.y[i]))])


# ---------------------------------------------------------------- canonical JSON

def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return "%.17g" % v if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = (",\n").join(f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}"
                            for k, v in items)
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        body = (",\n").join(pad + _emit(v, indent, level + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj, indent: int = 2) -> str:
    return _emit(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
