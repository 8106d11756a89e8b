"""The four classifier families behind one train/predict contract.

Families and their pinned defaults:

* ``logistic-regression``: L2, C=1, gradient tolerance 1e-4, 1000 Newton iterations max
* ``svm-rbf``: gamma=0.001, C=1, KKT tolerance 1e-3
* ``neural-net``: 100 ReLU units, logistic output, Adam (1e-3, 0.9/0.999),
  batch min(200, n), 200 epochs max, tolerance 1e-4
* ``decision-tree``: Gini, unlimited depth, min_samples_split=2, min_samples_leaf=1
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import logistic, mlp, modelfile, svm, tree

FAMILIES = ("logistic-regression", "svm-rbf", "neural-net", "decision-tree")
ALIASES = {"lr": "logistic-regression", "svm": "svm-rbf", "nn": "neural-net", "dt": "decision-tree"}
SHORT_NAMES = {v: k.upper() for k, v in ALIASES.items()}

DEFAULT_HYPERPARAMETERS = {
    "logistic-regression": {"C": 1.0, "tol": 1e-4, "max_iter": 1000},
    "svm-rbf": {"C": 1.0, "gamma": 0.001, "tol": 1e-3, "max_iter": None},
    "neural-net": {
        "hidden_units": 100,
        "alpha": 1e-4,
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "batch_size": 200,
        "max_epochs": 200,
        "tol": 1e-4,
        "n_iter_no_change": 10,
    },
    "decision-tree": {"min_samples_split": 2, "min_samples_leaf": 1, "max_depth": None},
}

_MODULES = {
    "logistic-regression": logistic,
    "svm-rbf": svm,
    "neural-net": mlp,
    "decision-tree": tree,
}


class DegenerateDataError(ValueError):
    pass


class WidthMismatchError(ValueError):
    pass


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    key = ALIASES.get(key, key)
    if key not in FAMILIES:
        raise ValueError(f"unknown model family {name!r}; expected one of {FAMILIES}")
    return key


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: Mapping = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        family = canonical_family(self.family)
        hp = dict(DEFAULT_HYPERPARAMETERS[family])
        unknown = set(self.hyperparameters) - set(hp)
        if unknown:
            raise ValueError(f"unknown hyperparameters for {family}: {sorted(unknown)}")
        hp.update(self.hyperparameters)
        _validate(family, hp)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "hyperparameters", hp)
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.family, dict(self.hyperparameters), seed)

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModelSpec":
        return cls(obj["family"], dict(obj.get("hyperparameters", {})), int(obj.get("seed", 0)))


def _validate(family, hp):
    def positive(key):
        if not float(hp[key]) > 0:
            raise ValueError(f"{family}: {key} must be > 0")

    if family in ("logistic-regression", "svm-rbf"):
        positive("C")
        positive("tol")
    if family == "svm-rbf":
        positive("gamma")
    if family == "neural-net":
        if int(hp["hidden_units"]) < 1:
            raise ValueError("neural-net: hidden_units must be >= 1")
        if float(hp["alpha"]) < 0:
            raise ValueError("neural-net: alpha must be >= 0")
        positive("learning_rate")
    if family == "decision-tree":
        if int(hp["min_samples_split"]) < 2:
            raise ValueError("decision-tree: min_samples_split must be >= 2")
        if int(hp["min_samples_leaf"]) < 1:
            raise ValueError("decision-tree: min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    params: dict
    diagnostics: dict
    n_features: int

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", False))


@dataclass(frozen=True)
class Prediction:
    labels: np.ndarray
    scores: np.ndarray


def train(spec: ModelSpec, X, y) -> TrainedModel:
    """Fit ``spec`` on rows ``X`` with 0/1 labels ``y``.

    Non-convergence is reported through ``diagnostics['converged']``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DegenerateDataError(f"{X.shape} matrix with {y.size} labels")
    if X.shape[0] < 1 or (spec.family != "decision-tree" and X.shape[0] < 2):
        raise DegenerateDataError(f"{spec.family} needs at least 2 rows")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1}:
        raise DegenerateDataError("labels must be 0/1")
    if spec.family != "decision-tree" and len(classes) < 2:
        raise DegenerateDataError(f"{spec.family} needs both classes in the training data")
    if not np.all(np.isfinite(X)):
        raise DegenerateDataError("training matrix has non-finite entries")
    params, diagnostics = _MODULES[spec.family].fit(X, y, spec.hyperparameters, spec.seed)
    return TrainedModel(spec, params, diagnostics, X.shape[1])


def decision_scores(model: TrainedModel, rows) -> np.ndarray:
    X = np.ascontiguousarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise WidthMismatchError(f"model expects {model.n_features} columns, got {X.shape[1]}")
    family = model.spec.family
    if family == "svm-rbf":
        return svm.scores(model.params, X, model.spec.hyperparameters)
    return _MODULES[family].scores(model.params, X)


def predict(model: TrainedModel, rows) -> Prediction:
    """Labels and scores: probability >= 0.5 (LR, NN, tree leaf share) or decision > 0 (SVM)."""
    s = decision_scores(model, rows)
    if model.spec.family == "svm-rbf":
        labels = (s > 0.0).astype(np.int64)
    else:
        labels = (s >= 0.5).astype(np.int64)
    return Prediction(labels, s)


def gradient_check(spec: ModelSpec, X, y, params: dict | None = None, h: float = 1e-5) -> float:
    """Max relative error of the network's analytic gradient against central differences."""
    spec = ModelSpec(spec.family, spec.hyperparameters, spec.seed)
    if spec.family != "neural-net":
        raise ValueError("gradient_check applies to the neural-net family")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if params is None:
        params = mlp.init_params(X.shape[1], int(spec.hyperparameters["hidden_units"]), np.random.default_rng(spec.seed))
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    return mlp.gradient_check(params, X, y, float(spec.hyperparameters["alpha"]), h=h)


def to_arrays(model: TrainedModel) -> dict[str, np.ndarray]:
    return {f"model.{k}": np.asarray(v) for k, v in model.params.items()}


def model_metadata(model: TrainedModel) -> dict:
    return {"spec": model.spec.to_dict(), "diagnostics": model.diagnostics, "n_features": model.n_features}


def from_parts(meta: dict, arrays: dict[str, np.ndarray]) -> TrainedModel:
    params = {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
    return TrainedModel(ModelSpec.from_dict(meta["spec"]), params, dict(meta["diagnostics"]), int(meta["n_features"]))


def save_model(path, model: TrainedModel, extra_metadata: dict | None = None,
               extra_arrays: dict | None = None) -> None:
    meta = {"kind": "classifier", "classifier": model_metadata(model)}
    meta.update(extra_metadata or {})
    arrays = to_arrays(model)
    arrays.update(extra_arrays or {})
    modelfile.write(path, meta, arrays)


def load_model(path) -> tuple[TrainedModel, dict, dict]:
    """Returns the model plus the full metadata and array maps (for pipeline extras)."""
    meta, arrays = modelfile.read(path)
    if "classifier" not in meta:
        raise modelfile.ModelFileError(f"{path}: no classifier block in metadata")
    return from_parts(meta["classifier"], arrays), meta, arrays


__all__ = [
    "ALIASES",
    "DEFAULT_HYPERPARAMETERS",
    "FAMILIES",
    "ModelSpec",
    "Prediction",
    "TrainedModel",
    "canonical_family",
    "decision_scores",
    "gradient_check",
    "load_model",
    "predict",
    "save_model",
    "train",
]
