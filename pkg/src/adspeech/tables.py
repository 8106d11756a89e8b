"""CSV tables (features, embeddings, fused) and atomic file writes.

Numbers are written with 17 significant digits so a write/read round trip
is exact. Labels are the strings ``ad`` (positive) and ``cn``; an empty
cell means unknown.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LABEL_TO_INT = {"ad": 1, "cn": 0}
INT_TO_LABEL = {1: "ad", 0: "cn"}


class TableError(ValueError):
    pass


def parse_label(text: str | None) -> int | None:
    if text is None:
        return None
    key = text.strip().lower()
    if key in ("", "unknown", "?", "none"):
        return None
    if key not in LABEL_TO_INT:
        raise TableError(f"label {text!r} is not one of ad/cn/unknown")
    return LABEL_TO_INT[key]


def format_label(label: int | None) -> str:
    return "" if label is None else INT_TO_LABEL[int(label)]


def format_float(x: float) -> str:
    return "%.17g" % x


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class Table:
    ids: list[str]
    labels: list[int | None] | None
    matrix: np.ndarray
    columns: list[str]

    def row(self, clip_id: str) -> np.ndarray:
        return self.matrix[self.ids.index(clip_id)]


def render_table(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["id"] + (["label"] if table.labels is not None else []) + list(table.columns)
    writer.writerow(header)
    for i, clip_id in enumerate(table.ids):
        row = [clip_id]
        if table.labels is not None:
            row.append(format_label(table.labels[i]))
        row.extend(format_float(v) for v in table.matrix[i])
        writer.writerow(row)
    return buf.getvalue()


def write_table(path, table: Table) -> None:
    atomic_write_text(path, render_table(table))


def read_table(path, prefix: str | None = None, width: int | None = None, with_label: bool | None = None) -> Table:
    """Parse a table CSV, validating its shape and every cell.

    Errors name the offending row (1-based, header is row 1).
    """
    path = Path(path)
    if not path.is_file():
        raise TableError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TableError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "id":
        raise TableError(f"{path}: header must start with 'id'")
    has_label = len(header) > 1 and header[1] == "label"
    if with_label is not None and has_label != with_label:
        raise TableError(f"{path}: expected {'a' if with_label else 'no'} label column")
    columns = header[2:] if has_label else header[1:]
    if prefix is not None:
        bad = [c for c in columns if not c.startswith(prefix)]
        if bad:
            raise TableError(f"{path}: unexpected column {bad[0]!r}")
    if width is not None and len(columns) != width:
        raise TableError(f"{path}: header has {len(columns)} value columns, expected {width}")
    ids, labels, values = [], [], []
    seen = set()
    expected = len(header)
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        clip_id = row[0]
        if len(row) != expected:
            raise TableError(
                f"{path}: row {lineno} (id {clip_id!r}) has {len(row) - (expected - len(columns))} values, "
                f"expected {len(columns)}"
            )
        if clip_id in seen:
            raise TableError(f"{path}: row {lineno} duplicates id {clip_id!r}")
        seen.add(clip_id)
        cells = row[2:] if has_label else row[1:]
        try:
            vec = [float(c) for c in cells]
        except ValueError as exc:
            raise TableError(f"{path}: row {lineno} (id {clip_id!r}) has a non-numeric cell: {exc}") from None
        ids.append(clip_id)
        if has_label:
            labels.append(parse_label(row[1]))
        values.append(vec)
    matrix = np.array(values, dtype=np.float64).reshape(len(values), len(columns))
    return Table(ids, labels if has_label else None, matrix, list(columns))
