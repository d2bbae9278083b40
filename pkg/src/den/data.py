"""Tabular tasks: the in-memory type, CSV ingestion and support/query splits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Task:
    X: np.ndarray
    y: np.ndarray
    L: int
    columns: list[str] = field(default_factory=list)
    task_id: str = "task"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be a matrix")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows, y has {self.y.shape[0]}")
        if self.L < 2:
            raise ValueError("a task needs at least 2 classes")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite entries")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.L):
            raise ValueError(f"labels must lie in [0, {self.L})")
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.d)]
        if len(self.columns) != self.d:
            raise ValueError("one column name per covariate")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rows(self, idx, task_id: str | None = None) -> Task:
        idx = np.asarray(idx, dtype=np.int64)
        return Task(self.X[idx], self.y[idx], self.L, list(self.columns), task_id or self.task_id)

    def select_columns(self, cols, task_id: str | None = None) -> Task:
        cols = [int(c) for c in cols]
        return Task(
            self.X[:, cols], self.y.copy(), self.L, [self.columns[c] for c in cols],
            task_id or self.task_id,
        )


class TaskFormatError(ValueError):
    pass


def load_task_csv(path, manifest: dict, task_id: str | None = None) -> Task:
    """Read a task from a headed CSV.

    ``manifest`` holds ``label_column``, ``classes`` (label values in the
    order that maps them to 0..L-1) and optionally ``columns``.  Label
    values are compared as strings.
    """
    path = Path(path)
    label_col = manifest.get("label_column")
    classes = manifest.get("classes")
    if label_col is None or classes is None:
        raise TaskFormatError("manifest needs 'label_column' and 'classes'")
    class_index = {str(c): i for i, c in enumerate(classes)}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TaskFormatError(f"{path}: empty file, header row expected") from None
        header = [h.strip() for h in header]
        if label_col not in header:
            raise TaskFormatError(f"{path}: label column {label_col!r} not in header")
        columns = manifest.get("columns") or [h for h in header if h != label_col]
        for c in columns:
            if c not in header:
                raise TaskFormatError(f"{path}: column {c!r} not in header")
        col_idx = [header.index(c) for c in columns]
        y_idx = header.index(label_col)
        X, y = [], []
        # rownum counts data rows from 1; the file line is rownum + 1
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise TaskFormatError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
            vals = []
            for c, j in zip(columns, col_idx):
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise TaskFormatError(
                        f"{path}: non-numeric value {cell!r} at row {rownum} (line {rownum + 1}), column {c!r}"
                    ) from None
                if not np.isfinite(v):
                    raise TaskFormatError(f"{path}: missing or non-finite value at row {rownum}, column {c!r}")
                vals.append(v)
            label = row[y_idx].strip()
            if label not in class_index:
                raise TaskFormatError(f"{path}: label {label!r} at row {rownum} not among declared classes")
            X.append(vals)
            y.append(class_index[label])
    X = np.array(X, dtype=np.float64).reshape(len(y), len(columns))
    return Task(X, np.array(y, dtype=np.int64), len(classes), list(columns), task_id or path.stem)


def save_task_csv(task: Task, csv_path, manifest_path=None, label_column: str = "label") -> dict:
    """Write ``task`` as CSV (float64 values round-trip via ``repr``) plus its manifest."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(task.columns) + [label_column])
        for xi, yi in zip(task.X, task.y):
            w.writerow([repr(float(v)) for v in xi] + [int(yi)])
    manifest = {
        "label_column": label_column,
        "classes": [str(k) for k in range(task.L)],
        "columns": list(task.columns),
    }
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def split_support_query(task: Task, n_support: int, seed) -> tuple[Task, Task]:
    """Stratified draw of ``n_support`` rows; the remainder is the query set.

    Every class gets at least one support row; the rest of the support
    budget is allocated proportionally to class frequency (largest
    remainder), leaving at least one query row per class when possible.
    """
    n, L = task.n, task.L
    if n_support >= n:
        raise ValueError(f"n_support={n_support} must be smaller than n={n}")
    if n_support < 2 * L:
        raise ValueError(f"n_support must be at least 2*L={2 * L}")
    counts = np.bincount(task.y, minlength=L)
    if np.any(counts == 0):
        raise ValueError(f"class {int(np.flatnonzero(counts == 0)[0])} has no examples")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    quota = np.ones(L, dtype=np.int64)
    share = counts / n * (n_support - L)
    quota += np.minimum(np.floor(share).astype(np.int64), np.maximum(counts - 2, 0))
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    # first keep one query row per class, then relax to the full class size
    for limit in (np.maximum(counts - 1, 1), counts):
        while quota.sum() < n_support:
            room = [k for k in order if quota[k] < limit[k]]
            if not room:
                break
            for k in room[: n_support - quota.sum()]:
                quota[k] += 1
    support_idx = []
    for k in range(L):
        rows = np.flatnonzero(task.y == k)
        support_idx.append(rng.choice(rows, size=quota[k], replace=False))
    support_idx = np.sort(np.concatenate(support_idx))
    query_mask = np.ones(n, dtype=bool)
    query_mask[support_idx] = False
    return (
        task.rows(support_idx, task.task_id),
        task.rows(np.flatnonzero(query_mask), task.task_id),
    )
