"""Cross-validation with positive-class metrics, plus model ranking and gap reports."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import classifiers
from .classifiers import ModelSpec
from .representation import (
    ColumnSelector,
    LabeledDataset,
    Standardizer,
    apply_selector,
    fit_standardizer,
    select_top_k,
)

METRIC_NAMES = ("accuracy", "precision", "recall", "specificity", "f1")
POOLED = "pooled"
MEAN_OF_FOLDS = "mean-of-folds"
LOSO = "loso"
STRATIFIED = "stratified-k"
BASELINE_ACCURACY = 0.6479


class FoldPlanError(ValueError):
    pass


class LeakageError(AssertionError):
    pass


# ------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    aggregation: str = POOLED
    flags: tuple[str, ...] = ()

    def metric(self, name: str) -> float:
        return float(getattr(self, name))

    def values(self) -> dict[str, float]:
        return {m: self.metric(m) for m in METRIC_NAMES}

    def to_dict(self) -> dict:
        out = {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}
        out.update(self.values())
        out["aggregation"] = self.aggregation
        out["flags"] = list(self.flags)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EvalMetrics":
        return cls(
            int(obj["tp"]), int(obj["fp"]), int(obj["fn"]), int(obj["tn"]),
            *(float(obj[m]) for m in METRIC_NAMES),
            aggregation=obj.get("aggregation", POOLED), flags=tuple(obj.get("flags", ())),
        )


def compute_metrics(tp: int, fp: int, fn: int, tn: int) -> EvalMetrics:
    """Accuracy and AD-positive precision/recall/specificity/F1 from a confusion matrix.

    A zero denominator yields 0 and a flag naming the metric.
    """
    counts = (tp, fp, fn, tn)
    if any(int(c) != c or c < 0 for c in counts):
        raise ValueError(f"confusion counts must be nonnegative integers, got {counts}")
    tp, fp, fn, tn = (int(c) for c in counts)
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("confusion matrix is empty")
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_undefined")
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    specificity = ratio(tn, tn + fp, "specificity")
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return EvalMetrics(tp, fp, fn, tn, (tp + tn) / total, precision, recall, specificity, f1, POOLED, tuple(flags))


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return (
        int(np.sum(y_true & y_pred)),
        int(np.sum(~y_true & y_pred)),
        int(np.sum(y_true & ~y_pred)),
        int(np.sum(~y_true & ~y_pred)),
    )


def metrics_from_predictions(y_true, y_pred) -> EvalMetrics:
    return compute_metrics(*confusion(y_true, y_pred))


def mean_of_folds(per_fold: Sequence[EvalMetrics]) -> EvalMetrics:
    """Unweighted mean of each metric over folds; counts are summed."""
    if not per_fold:
        raise ValueError("no folds to aggregate")
    sums = [sum(getattr(m, c) for m in per_fold) for c in ("tp", "fp", "fn", "tn")]
    means = [float(np.mean([m.metric(name) for m in per_fold])) for name in METRIC_NAMES]
    flags = sorted({f"fold{i}:{f}" for i, m in enumerate(per_fold) for f in m.flags})
    return EvalMetrics(*sums, *means, aggregation=MEAN_OF_FOLDS, flags=tuple(flags))


# ---------------------------------------------------------------- fold plans

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]
    scheme: str
    seed: int | None = None
    n_rows: int = 0

    def __post_init__(self):
        seen = np.zeros(self.n_rows, dtype=np.int64)
        for train_idx, test_idx in self.folds:
            if np.intersect1d(train_idx, test_idx).size:
                raise FoldPlanError("a fold has rows on both sides")
            seen[test_idx] += 1
        if self.n_rows and not np.all(seen == 1):
            raise FoldPlanError("test sets must partition the rows exactly")

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "n_rows": self.n_rows,
            "test_indices": [t.tolist() for _, t in self.folds],
        }


def _complement(n: int, test: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask)


def make_loso_folds(dataset: LabeledDataset) -> FoldPlan:
    """One fold per subject, in order of first appearance."""
    n = dataset.n_rows
    if n < 2:
        raise FoldPlanError("LOSO needs at least 2 rows")
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(dataset.subject_ids):
        groups.setdefault(s, []).append(i)
    if len(groups) < 2:
        raise FoldPlanError("LOSO needs at least 2 subjects")
    folds = []
    for rows in groups.values():
        test = np.array(rows, dtype=np.int64)
        folds.append((_complement(n, test), test))
    return FoldPlan(tuple(folds), LOSO, None, n)


def make_stratified_kfold(dataset: LabeledDataset, k: int = 10, seed: int = 0,
                          allow_small_classes: bool = False) -> FoldPlan:
    """Seeded shuffle within each class, then round-robin into ``k`` folds.

    The second class continues the round-robin where the first stopped, so fold
    sizes differ by at most one overall as well as per class. A class with
    fewer than ``k`` rows is an error unless ``allow_small_classes`` (needed
    for the ``k = n`` leave-one-out limit).
    """
    n = dataset.n_rows
    if k < 2:
        raise FoldPlanError("k must be at least 2")
    if k > n:
        raise FoldPlanError(f"k={k} exceeds the {n} rows")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in (0, 1):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size < k and not allow_small_classes:
            raise FoldPlanError(f"class {cls} has {members.size} rows, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        assignment[members] = (cursor + np.arange(members.size)) % k
        cursor = (cursor + members.size) % k
    folds = []
    for f in range(k):
        test = np.flatnonzero(assignment == f)
        folds.append((_complement(n, test), test))
    return FoldPlan(tuple(folds), STRATIFIED, seed, n)


# ----------------------------------------------------------------- CV runner

@dataclass(frozen=True)
class PipelineSpec:
    """Per-fold fit recipe: optional top-k selection, optional z-scoring, classifier."""

    model: ModelSpec
    select_k: int | None = None
    standardize: bool = False

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "select_k": self.select_k, "standardize": self.standardize}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "PipelineSpec":
        return cls(ModelSpec.from_dict(obj["model"]), obj.get("select_k"), bool(obj.get("standardize", False)))


@dataclass(frozen=True)
class FittedPipeline:
    spec: PipelineSpec
    selector: ColumnSelector | None
    standardizer: Standardizer | None
    model: classifiers.TrainedModel
    train_rows: tuple[int, ...] = ()

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.selector is not None:
            X = X[:, list(self.selector.chosen_indices)]
        if self.standardizer is not None:
            X = self.standardizer.transform_matrix(X)
        return X

    def predict(self, X) -> classifiers.Prediction:
        return classifiers.predict(self.model, self.transform(X))


def fold_seed(seed: int, fold_index: int) -> int:
    """Per-fold model seed derived from ``(seed, fold_index)`` only."""
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(fold_index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def fit_pipeline(spec: PipelineSpec, train: LabeledDataset, seed: int | None = None,
                 train_rows: Sequence[int] = ()) -> FittedPipeline:
    """Fit every pipeline stage on ``train`` only."""
    data = train
    selector = None
    if spec.select_k is not None:
        selector = select_top_k(data, spec.select_k)
        data = apply_selector(selector, data)
    standardizer = None
    if spec.standardize:
        standardizer = fit_standardizer(data.matrix)
        data = standardizer.transform(data)
    model_spec = spec.model if seed is None else spec.model.with_seed(seed)
    model = classifiers.train(model_spec, data.matrix, data.labels)
    return FittedPipeline(spec, selector, standardizer, model, tuple(int(r) for r in train_rows))


@dataclass
class FoldResult:
    index: int
    test_indices: list[int]
    predictions: list[int]
    scores: list[float]
    metrics: EvalMetrics
    selected: tuple[int, ...] | None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class CVResult:
    pipeline: PipelineSpec
    scheme: str
    seed: int | None
    folds: list[FoldResult]
    aggregate: EvalMetrics
    pooled: EvalMetrics
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline.to_dict(),
            "plan": {"scheme": self.scheme, "seed": self.seed, "n_folds": len(self.folds)},
            "seed": self.seed,
            "aggregation": self.aggregate.aggregation,
            "fit_scope": "fold-local",
            "per_fold": [
                {
                    "fold": f.index,
                    "test_indices": f.test_indices,
                    "predictions": f.predictions,
                    "metrics": f.metrics.to_dict(),
                    "selected_columns": list(f.selected) if f.selected is not None else None,
                    "diagnostics": f.diagnostics,
                }
                for f in self.folds
            ],
            "aggregate": self.aggregate.to_dict(),
            "pooled": self.pooled.to_dict(),
            "flags": list(self.flags),
        }


def _run_fold(args):
    dataset, spec, index, train_idx, test_idx, seed = args
    train_set = set(train_idx.tolist())
    if train_set.intersection(test_idx.tolist()):
        raise LeakageError(f"fold {index}: test rows present in the training split")
    fitted = fit_pipeline(spec, dataset.take_rows(train_idx), fold_seed(seed, index), train_idx)
    if set(fitted.train_rows) != train_set:
        raise LeakageError(f"fold {index}: pipeline fitted on rows other than the fold's training split")
    test = dataset.take_rows(test_idx)
    pred = fitted.predict(test.matrix)
    m = metrics_from_predictions(test.labels, pred.labels)
    diag = {k: v for k, v in fitted.model.diagnostics.items() if isinstance(v, (int, float, bool, str))}
    return FoldResult(
        index, test_idx.tolist(), pred.labels.tolist(), pred.scores.tolist(), m,
        fitted.selector.chosen_indices if fitted.selector is not None else None, diag,
    )


def run_cv(dataset: LabeledDataset, pipeline: PipelineSpec, plan: FoldPlan, workers: int = 1) -> CVResult:
    """Fit and score every fold; LOSO aggregates pooled, k-fold as mean of folds."""
    if plan.n_rows != dataset.n_rows:
        raise FoldPlanError(f"plan covers {plan.n_rows} rows but dataset has {dataset.n_rows}")
    seed = plan.seed if plan.seed is not None else pipeline.model.seed
    jobs = [(dataset, pipeline, i, tr, te, seed) for i, (tr, te) in enumerate(plan.folds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(_run_fold, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        folds = [_run_fold(j) for j in jobs]
    folds.sort(key=lambda f: f.index)
    tp = fp = fn = tn = 0
    for f in folds:
        tp += f.metrics.tp
        fp += f.metrics.fp
        fn += f.metrics.fn
        tn += f.metrics.tn
    pooled = compute_metrics(tp, fp, fn, tn)
    aggregate = pooled if plan.scheme == LOSO else mean_of_folds([f.metrics for f in folds])
    flags = []
    if any(not f.diagnostics.get("converged", True) for f in folds):
        flags.append("model_not_converged_in_some_folds")
    flags.extend(aggregate.flags)
    return CVResult(pipeline, plan.scheme, plan.seed, folds, aggregate, pooled, tuple(flags))


# ------------------------------------------------------------------ reporting

def rank_models(results: Sequence[tuple[str, float]], m: int = 5) -> list[tuple[str, float]]:
    """Top ``m`` by accuracy, descending; ties go to the alphabetically first name."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if not results:
        raise ValueError("no models to rank")
    if m > len(results):
        raise ValueError(f"asked for {m} models but only {len(results)} given")
    ordered = sorted(results, key=lambda r: (-float(r[1]), str(r[0])))
    return [(str(name), float(acc)) for name, acc in ordered[:m]]


@dataclass(frozen=True)
class GapReport:
    """Signed differences ``100 * (a - b)`` in percentage points, per metric."""

    gaps: Mapping[str, float]
    source_a: str = "a"
    source_b: str = "b"

    def rounded(self, digits: int = 2) -> dict[str, float]:
        return {k: round(v, digits) + 0.0 for k, v in self.gaps.items()}

    def __neg__(self) -> "GapReport":
        return GapReport({k: -v for k, v in self.gaps.items()}, self.source_b, self.source_a)

    def to_dict(self) -> dict:
        return {"a": self.source_a, "b": self.source_b, "gaps_pp": self.rounded()}


def _metric_map(x) -> dict[str, float]:
    if isinstance(x, EvalMetrics):
        return x.values()
    return {k: float(v) for k, v in x.items() if k in METRIC_NAMES}


def gap_report(a, b, source_a: str = "a", source_b: str = "b") -> GapReport:
    """Per-metric gaps between two metric suites (``EvalMetrics`` or name->value maps)."""
    ma, mb = _metric_map(a), _metric_map(b)
    if set(ma) != set(mb):
        raise ValueError(f"metric suites differ: {sorted(ma)} vs {sorted(mb)}")
    ordered = [k for k in METRIC_NAMES if k in ma]
    return GapReport({k: 100.0 * (ma[k] - mb[k]) for k in ordered}, source_a, source_b)


def baseline_delta(model_accuracy: float, baseline_accuracy: float = BASELINE_ACCURACY) -> float:
    """Accuracy difference to the baseline in percentage points."""
    for v in (model_accuracy, baseline_accuracy):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    return 100.0 * (model_accuracy - baseline_accuracy)


def gap_table(rows: Mapping[str, Mapping[str, Mapping[str, float]]], reference: str,
              comparisons: Sequence[str]) -> dict:
    """Gap table with one row per model and, per metric, one column per comparison source.

    ``rows[model][source]`` maps metric names to values; each cell is
    ``100 * (rows[model][reference] - rows[model][source])``.
    """
    table = []
    metrics_seen: list[str] = []
    for model, sources in rows.items():
        entry: dict = {"model": model}
        for comp in comparisons:
            if comp not in sources or reference not in sources:
                continue
            report = gap_report(sources[reference], sources[comp], reference, comp)
            for metric, value in report.rounded().items():
                entry.setdefault(metric, {})[comp] = value
                if metric not in metrics_seen:
                    metrics_seen.append(metric)
        table.append(entry)
    return {
        "reference": reference,
        "comparisons": list(comparisons),
        "metrics": [m for m in METRIC_NAMES if m in metrics_seen],
        "units": "percentage points",
        "rows": table,
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


__all__ = [
    "CVResult", "EvalMetrics", "FittedPipeline", "FoldPlan", "GapReport", "PipelineSpec",
    "baseline_delta", "compute_metrics", "fit_pipeline", "gap_report", "gap_table",
    "make_loso_folds", "make_stratified_kfold", "mean_of_folds", "rank_models", "run_cv",
]
