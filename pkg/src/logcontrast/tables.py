"""CSV/JSON readers and writers used by the command line tool."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["InputError", "Table", "file_digest", "format_number", "read_groups", "read_table",
           "to_jsonable", "write_csv", "write_json"]


class InputError(ValueError):
    """Malformed user input; reported with file, line and column."""


def format_number(x):
    """17 significant digits for floats; integers and strings unchanged."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass
class Table:
    path: str
    columns: list
    ids: list
    values: np.ndarray

    def column(self, name):
        try:
            j = self.columns.index(name)
        except ValueError:
            raise InputError(f"{self.path}: no column named {name!r}") from None
        return self.values[:, j]

    def select(self, names):
        return np.column_stack([self.column(c) for c in names]) if names else np.zeros((len(self.ids), 0))


def read_table(path, id_col=None):
    """Numeric table with a header row.

    The first column holds sample ids unless ``id_col`` names another one.
    Every other cell must parse as a float; errors name the line and column.
    """
    path = str(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    id_j = 0 if id_col is None else header.index(id_col) if id_col in header else None
    if id_j is None:
        raise InputError(f"{path}: no column named {id_col!r}")
    cols = [h for j, h in enumerate(header) if j != id_j]
    ids, vals = [], np.empty((len(rows) - 1, len(cols)))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        ids.append(row[id_j].strip())
        k = 0
        for j, cell in enumerate(row):
            if j == id_j:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}:{line}: column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}:{line}: column {header[j]!r}: non-finite value {cell!r}")
            vals[i, k] = v
            k += 1
    return Table(path, cols, ids, vals)


def read_groups(path, columns):
    """Map of group label to column names from ``name,label`` lines.

    Blank lines and ``#`` comments are skipped; a first line whose name is
    not a known column is taken as a header.
    """
    known = set(columns)
    groups = {}
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    for i, row in enumerate(lines):
        row = [c.strip() for c in row]
        if not row or not row[0] or row[0].startswith("#"):
            continue
        if len(row) == 1:
            row = row[0].split()
        if len(row) != 2:
            raise InputError(f"{path}:{i + 1}: expected 'column,group'")
        name, label = row
        if name not in known:
            if i == 0:
                continue
            raise InputError(f"{path}:{i + 1}: unknown column {name!r}")
        groups.setdefault(label, []).append(name)
    return groups


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for r in rows:
            w.writerow([format_number(v) for v in r])


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
