"""Design matrices: feature/embedding fusion plus ANOVA-F selection and scaling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embedder import COLUMN_NAMES as EMBED_COLUMNS
from .embedder import EMBED_DIM, EmbeddingVector
from .features import COLUMN_NAMES as FEATURE_COLUMNS
from .features import LAYOUT_ID, N_FEATURES, FeatureVector

FUSED_DIM = N_FEATURES + EMBED_DIM
FUSED_COLUMNS = FEATURE_COLUMNS + EMBED_COLUMNS
F_SENTINEL = 1e12
SD_FLOOR = 1e-12


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Rows are samples; ``labels`` are 1 (AD) / 0 (CN)."""

    matrix: np.ndarray
    labels: np.ndarray
    subject_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    row_ids: tuple[str, ...] = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        labels = np.asarray(self.labels).astype(np.int64)
        n, d = matrix.shape
        if labels.shape != (n,):
            raise ValueError(f"{labels.size} labels for {n} rows")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        subjects = tuple(str(s) for s in self.subject_ids)
        if len(subjects) != n:
            raise ValueError(f"{len(subjects)} subject ids for {n} rows")
        names = tuple(self.column_names)
        if len(names) != d:
            raise ValueError(f"{len(names)} column names for {d} columns")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("dataset contains non-finite entries")
        row_ids = subjects if self.row_ids is None else tuple(str(r) for r in self.row_ids)
        if len(row_ids) != n:
            raise ValueError(f"{len(row_ids)} row ids for {n} rows")
        matrix.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subject_ids", subjects)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def take_rows(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.matrix[idx],
            self.labels[idx],
            tuple(self.subject_ids[i] for i in idx),
            self.column_names,
            tuple(self.row_ids[i] for i in idx),
        )

    def with_matrix(self, matrix, column_names=None) -> "LabeledDataset":
        return LabeledDataset(
            matrix, self.labels, self.subject_ids,
            self.column_names if column_names is None else column_names, self.row_ids,
        )


def fuse(features: FeatureVector, embedding: EmbeddingVector) -> np.ndarray:
    """Concatenate 168 features and 768 embedding values into a 936-vector."""
    if features.clip_id is not None and embedding.clip_id is not None and features.clip_id != embedding.clip_id:
        raise ValueError(f"clip id mismatch: features {features.clip_id!r} vs embedding {embedding.clip_id!r}")
    return np.concatenate([features.values, embedding.values])


def anova_f(dataset: LabeledDataset) -> np.ndarray:
    """Per-column one-way ANOVA F between the two label groups.

    F is 0 when the between-group mean square is 0 and ``F_SENTINEL`` when
    only the within-group mean square is 0.
    """
    X, y = dataset.matrix, dataset.labels
    n = X.shape[0]
    groups = [X[y == g] for g in (0, 1)]
    if any(g.shape[0] == 0 for g in groups):
        raise SingleClassError("ANOVA F needs both classes present")
    if n < 3:
        raise ValueError("ANOVA F needs at least 3 rows")
    k = 2
    grand = X.mean(axis=0)
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for g in groups:
        mu = g.mean(axis=0)
        ss_between += g.shape[0] * (mu - grand) ** 2
        ss_within += ((g - mu) ** 2).sum(axis=0)
    ms_between = ss_between / (k - 1)
    ms_within = ss_within / (n - k)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(ms_within > 0, ms_between / np.where(ms_within > 0, ms_within, 1.0), 0.0)
    f = np.where(ms_between == 0, 0.0, f)
    f = np.where((ms_within == 0) & (ms_between > 0), F_SENTINEL, f)
    return f


@dataclass(frozen=True)
class ColumnSelector:
    chosen_indices: tuple[int, ...]
    scores: tuple[float, ...]
    k: int
    layout_id: str = LAYOUT_ID

    def __post_init__(self):
        idx = tuple(int(i) for i in self.chosen_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("selector indices must be strictly ascending")
        if idx and (idx[0] < 0 or idx[-1] >= len(self.scores)):
            raise ValueError("selector index out of range")
        object.__setattr__(self, "chosen_indices", idx)
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    def to_json(self) -> str:
        return json.dumps(
            {"layout_id": self.layout_id, "k": self.k, "indices": list(self.chosen_indices),
             "scores": list(self.scores)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ColumnSelector":
        obj = json.loads(text)
        return cls(tuple(obj["indices"]), tuple(obj["scores"]), int(obj["k"]), obj["layout_id"])


def select_top_k(dataset: LabeledDataset, k: int = 10, layout_id: str = LAYOUT_ID) -> ColumnSelector:
    """Keep the ``k`` highest-F columns (ties go to the lower index), returned ascending."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = anova_f(dataset)
    d = scores.size
    if k >= d:
        chosen = tuple(range(d))
    else:
        order = np.lexsort((np.arange(d), -scores))
        chosen = tuple(sorted(int(i) for i in order[:k]))
    return ColumnSelector(chosen, tuple(scores), k, layout_id)


def apply_selector(selector: ColumnSelector, dataset: LabeledDataset) -> LabeledDataset:
    idx = list(selector.chosen_indices)
    if idx and (idx[-1] >= dataset.n_cols or idx[0] < 0):
        raise IndexError(f"selector index {idx[-1]} out of range for width {dataset.n_cols}")
    return dataset.with_matrix(dataset.matrix[:, idx], tuple(dataset.column_names[i] for i in idx))


@dataclass(frozen=True)
class Standardizer:
    """Column z-scoring fitted on a training split; near-constant columns pass through."""

    mean: np.ndarray
    scale: np.ndarray
    passthrough: np.ndarray = field(default=None)

    def transform_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mean.size:
            raise ValueError(f"standardizer fitted on {self.mean.size} columns, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def transform(self, dataset: LabeledDataset) -> LabeledDataset:
        return dataset.with_matrix(self.transform_matrix(dataset.matrix))


def fit_standardizer(X) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least 2 rows")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    passthrough = sd < SD_FLOOR
    return Standardizer(np.where(passthrough, 0.0, mean), np.where(passthrough, 1.0, sd), passthrough)


def standardize(train: LabeledDataset) -> tuple[Standardizer, LabeledDataset]:
    transform = fit_standardizer(train.matrix)
    return transform, transform.transform(train)
