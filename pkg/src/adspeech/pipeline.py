"""Experiment orchestration: config, manifests, content-hashed stages.

Every stage writes its output atomically next to a ``<name>.meta.json``
sidecar that records the stage hash (config subsection plus input content),
the layout id and the sha256 of the output bytes. A stage whose sidecar
matches is reported as ``cached`` and left untouched.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, classifiers, embedder, evaluation
from .audio_io import AudioError, ClipTooShortError, load_wav, to_canonical
from .features import COLUMN_NAMES as FEATURE_COLUMNS
from .features import LAYOUT_ID, N_FEATURES, InsufficientFramesError, extract_features
from .representation import FUSED_COLUMNS, ColumnSelector, LabeledDataset, Standardizer
from .classifiers import modelfile
from .tables import (
    Table, TableError, atomic_write_bytes, atomic_write_text, format_float, format_label, parse_label,
    read_table, render_table, write_json,
)

log = logging.getLogger(__name__)

MODES = ("feat", "embed", "combo")
STUB_BACKEND = "builtin:stub"
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

FEATURES_CSV = "features.csv"
EMBEDDINGS_CSV = "embeddings.csv"
FUSED_CSV = "fused.csv"
CV_REPORT = "cv_report.json"
MODEL_FILE = "model.adspk"
PREDICTIONS_CSV = "predictions.csv"
TEST_METRICS = "test_metrics.json"
GAP_REPORT = "gap_report.json"


class ConfigError(ValueError):
    pass


class ManifestError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


class ArtifactMismatchError(ValueError):
    pass


class ClipProcessingError(Exception):
    """Extraction failure for one clip; ``validation`` marks bad input rather than a crash."""

    def __init__(self, clip_id: str, message: str, validation: bool):
        super().__init__(f"clip {clip_id!r}: {message}")
        self.clip_id = clip_id
        self.validation = validation


VALIDATION_ERRORS = (
    ConfigError, ManifestError, LayoutMismatchError, ArtifactMismatchError, TableError,
    modelfile.ModelFileError, embedder.EncoderError,
)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_hash(obj) -> str:
    return sha256_bytes(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8"))


# ------------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: Path
    label: int | None
    subject_id: str


@dataclass(frozen=True)
class CorpusManifest:
    source: Path
    entries: tuple[ManifestEntry, ...]

    @property
    def ids(self) -> list[str]:
        return [e.clip_id for e in self.entries]

    @property
    def labeled(self) -> bool:
        return bool(self.entries) and all(e.label is not None for e in self.entries)

    def audio_hashes(self) -> dict[str, str]:
        return {e.clip_id: sha256_bytes(e.path.read_bytes()) for e in self.entries}

    def content_hash(self, audio_hashes: dict[str, str] | None = None) -> str:
        audio = audio_hashes if audio_hashes is not None else self.audio_hashes()
        return canonical_hash([[e.clip_id, format_label(e.label), e.subject_id, audio[e.clip_id]]
                               for e in self.entries])


def load_manifest(path, require_labels: bool = False, check_files: bool = True) -> CorpusManifest:
    """Read ``id,path,label,subject_id``; audio paths resolve against the manifest's folder."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:4]] != ["id", "path", "label", "subject_id"]:
        raise ManifestError(f"{path}: header must be id,path,label,subject_id")
    entries = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ManifestError(f"{path}: row {lineno} has {len(row)} cells, expected 4")
        clip_id, audio, label_text, subject = (c.strip() for c in row)
        if not clip_id:
            raise ManifestError(f"{path}: row {lineno} has an empty id")
        if clip_id in seen:
            raise ManifestError(f"{path}: duplicate clip id {clip_id!r}")
        seen.add(clip_id)
        try:
            label = parse_label(label_text)
        except TableError as exc:
            raise ManifestError(f"{path}: clip {clip_id!r}: {exc}") from None
        if require_labels and label is None:
            raise ManifestError(f"{path}: clip {clip_id!r} has no label but training needs one")
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = path.parent / audio_path
        if check_files and not audio_path.is_file():
            raise ManifestError(f"{path}: clip {clip_id!r}: audio file {audio_path} does not exist")
        entries.append(ManifestEntry(clip_id, audio_path, label, subject or clip_id))
    return CorpusManifest(path, tuple(entries))


# --------------------------------------------------------------------- config

CONFIG_KEYS = {
    "corpus_manifest": None,
    "output_directory": None,
    "representation_mode": "feat",
    "model_family": "svm-rbf",
    "model_hyperparameters": {},
    "selector_enabled": None,
    "selector_k": 10,
    "standardization": False,
    "cv_scheme": "loso",
    "cv_seed": 0,
    "cv_folds": 10,
    "encoder_backend_path": None,
    "precomputed_embeddings_path": None,
    "worker_count": 1,
    "test_manifest": None,
}
_PATH_KEYS = ("corpus_manifest", "output_directory", "encoder_backend_path",
              "precomputed_embeddings_path", "test_manifest")


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment settings; ``selector_enabled=None`` means on for ``feat`` mode only."""

    corpus_manifest: str
    output_directory: str
    representation_mode: str = "feat"
    model_family: str = "svm-rbf"
    model_hyperparameters: dict = field(default_factory=dict)
    selector_enabled: bool | None = None
    selector_k: int = 10
    standardization: bool = False
    cv_scheme: str = "loso"
    cv_seed: int = 0
    cv_folds: int = 10
    encoder_backend_path: str | None = None
    precomputed_embeddings_path: str | None = None
    worker_count: int = 1
    test_manifest: str | None = None

    @classmethod
    def from_dict(cls, obj: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(obj) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [k for k in ("corpus_manifest", "output_directory") if not obj.get(k)]
        if missing:
            raise ConfigError(f"missing required config keys: {missing}")
        values = {k: obj.get(k, default) for k, default in CONFIG_KEYS.items()}
        if base_dir is not None:
            for key in _PATH_KEYS:
                v = values[key]
                if v and v != STUB_BACKEND and not Path(v).is_absolute():
                    values[key] = str(Path(base_dir) / v)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"{path}: config file not found")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(obj, base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    @property
    def selector_active(self) -> bool:
        if self.selector_enabled is None:
            return self.representation_mode == "feat"
        return bool(self.selector_enabled)

    @property
    def uses_embeddings(self) -> bool:
        return self.representation_mode in ("embed", "combo")

    @property
    def uses_features(self) -> bool:
        return self.representation_mode in ("feat", "combo")

    def model_spec(self) -> classifiers.ModelSpec:
        return classifiers.ModelSpec(self.model_family, dict(self.model_hyperparameters), self.cv_seed)

    def pipeline_spec(self) -> evaluation.PipelineSpec:
        return evaluation.PipelineSpec(
            self.model_spec(), int(self.selector_k) if self.selector_active else None, bool(self.standardization),
        )

    def config_hash(self) -> str:
        """Hash of the settings that can change results; output location and pool size are excluded."""
        return canonical_hash({k: v for k, v in self.to_dict().items()
                               if k not in ("worker_count", "output_directory")})

    def pipeline_hash(self) -> str:
        """Hash of everything that defines the fitted model, excluding the CV plan."""
        return canonical_hash({
            "representation_mode": self.representation_mode,
            "pipeline": self.pipeline_spec().to_dict(),
            "layout_id": LAYOUT_ID,
        })

    def validate(self) -> None:
        if self.representation_mode not in MODES:
            raise ConfigError(f"representation_mode must be one of {MODES}, got {self.representation_mode!r}")
        try:
            self.pipeline_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.selector_active and int(self.selector_k) < 1:
            raise ConfigError("selector_k must be at least 1")
        if self.cv_scheme not in (evaluation.LOSO, evaluation.STRATIFIED):
            raise ConfigError(f"cv_scheme must be 'loso' or 'stratified-k', got {self.cv_scheme!r}")
        if int(self.cv_folds) < 2:
            raise ConfigError("cv_folds must be at least 2")
        if int(self.worker_count) < 1:
            raise ConfigError("worker_count must be at least 1")
        if self.uses_embeddings and not (self.encoder_backend_path or self.precomputed_embeddings_path):
            raise ConfigError(f"mode {self.representation_mode!r} needs encoder_backend_path "
                              "or precomputed_embeddings_path")
        for key in ("corpus_manifest", "encoder_backend_path", "precomputed_embeddings_path", "test_manifest"):
            v = getattr(self, key)
            if v and v != STUB_BACKEND and not Path(v).exists():
                raise ConfigError(f"{key}: {v} does not exist")


# ------------------------------------------------------------ clip extraction

_BACKENDS: dict[str, embedder.EncoderBackend] = {}


def make_backend(spec: str) -> embedder.EncoderBackend:
    """``builtin:stub`` or a path to an ONNX encoder; one instance per process."""
    if spec not in _BACKENDS:
        _BACKENDS[spec] = embedder.StubEncoder() if spec == STUB_BACKEND else embedder.OnnxEncoder(spec)
    return _BACKENDS[spec]


def _load_clip(path: str):
    return to_canonical(load_wav(path))


def _feature_job(job):
    clip_id, path = job
    try:
        return clip_id, extract_features(_load_clip(path), clip_id).values, None
    except (AudioError, InsufficientFramesError, ClipTooShortError) as exc:
        return clip_id, None, (True, f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # reported per clip by the coordinator
        return clip_id, None, (False, f"{type(exc).__name__}: {exc}")


def _embedding_job(job):
    clip_id, path, backend_spec = job
    try:
        backend = make_backend(backend_spec)
        return clip_id, embedder.extract_embedding(_load_clip(path), backend, clip_id).values, None
    except AudioError as exc:
        return clip_id, None, (True, f"{type(exc).__name__}: {exc}")
    except Exception as exc:
        return clip_id, None, (False, f"{type(exc).__name__}: {exc}")


def _map_clips(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    out = {}
    for clip_id, values, err in results:
        if err is not None:
            raise ClipProcessingError(clip_id, err[1], validation=err[0])
        out[clip_id] = values
    return out


def feature_rows(manifest: CorpusManifest, workers: int = 1) -> np.ndarray:
    values = _map_clips(_feature_job, [(e.clip_id, str(e.path)) for e in manifest.entries], workers)
    return np.vstack([values[i] for i in manifest.ids]) if manifest.entries else np.zeros((0, N_FEATURES))


def embedding_rows(manifest: CorpusManifest, backend_spec: str | None, precomputed: str | None,
                   workers: int = 1) -> tuple[np.ndarray, str]:
    """Embedding matrix in manifest order plus a source description for provenance."""
    if precomputed:
        table = embedder.load_precomputed(precomputed)
        missing = [i for i in manifest.ids if i not in table]
        if missing:
            raise ClipProcessingError(missing[0], f"not present in precomputed embeddings {precomputed}",
                                      validation=True)
        rows = [table[i].values for i in manifest.ids]
        source = f"precomputed/{sha256_bytes(Path(precomputed).read_bytes())}"
    else:
        source = make_backend(backend_spec).fingerprint
        values = _map_clips(_embedding_job, [(e.clip_id, str(e.path), backend_spec) for e in manifest.entries],
                            workers)
        rows = [values[i] for i in manifest.ids]
    matrix = np.vstack(rows) if rows else np.zeros((0, embedder.EMBED_DIM))
    return matrix, source


# --------------------------------------------------------------- stage cache

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def read_sidecar(path) -> dict | None:
    side = _sidecar(Path(path))
    if not side.is_file():
        return None
    try:
        return json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None


def _is_cached(path: Path, stage_hash: str) -> bool:
    meta = read_sidecar(path)
    if meta is None or meta.get("stage_hash") != stage_hash or not path.is_file():
        return False
    return meta.get("output_sha256") == sha256_bytes(path.read_bytes())


def _commit(path: Path, data: bytes, provenance: dict) -> None:
    atomic_write_bytes(path, data)
    meta = dict(provenance)
    meta["output_sha256"] = sha256_bytes(data)
    meta["package_version"] = __version__
    write_json(_sidecar(path), meta)


def render_table_bytes(table: Table) -> bytes:
    return render_table(table).encode("utf-8")


@dataclass
class StageLog:
    statuses: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def record(self, stage: str, status: str, path: Path) -> None:
        # a stage revisited later in the same run keeps its "computed" status
        if self.statuses.get(stage) != "computed":
            self.statuses[stage] = status
        self.artifacts[stage] = str(path)


# ------------------------------------------------------------------ experiment

class Experiment:
    """Runs the stages of one config; each stage method returns its output path."""

    def __init__(self, config: ExperimentConfig, require_labels: bool = True):
        config.validate()
        self.config = config
        self.out = Path(config.output_directory)
        self.log = StageLog()
        self.workers = int(config.worker_count)
        self.manifest = load_manifest(config.corpus_manifest, require_labels=require_labels)
        if require_labels and not self.manifest.entries:
            raise ManifestError(f"{config.corpus_manifest}: training manifest has no clips")
        self._audio = self.manifest.audio_hashes()
        self.corpus_hash = self.manifest.content_hash(self._audio)

    def _provenance(self, stage: str, stage_hash: str, **extra) -> dict:
        meta = {
            "stage": stage,
            "stage_hash": stage_hash,
            "config_hash": self.config.config_hash(),
            "layout_id": LAYOUT_ID,
            "corpus_hash": self.corpus_hash,
        }
        meta.update(extra)
        return meta

    def _labels(self, manifest: CorpusManifest) -> list[int | None]:
        return [e.label for e in manifest.entries]

    def features(self) -> Path:
        path = self.out / FEATURES_CSV
        stage_hash = canonical_hash({"stage": "features", "corpus": self.corpus_hash, "layout": LAYOUT_ID,
                                     "version": __version__})
        if _is_cached(path, stage_hash):
            self.log.record("features", "cached", path)
            return path
        matrix = feature_rows(self.manifest, self.workers)
        table = Table(self.manifest.ids, self._labels(self.manifest), matrix, list(FEATURE_COLUMNS))
        _commit(path, render_table_bytes(table), self._provenance("features", stage_hash))
        self.log.record("features", "computed", path)
        return path

    def _embedding_source_key(self) -> dict:
        c = self.config
        if c.precomputed_embeddings_path:
            return {"precomputed": sha256_bytes(Path(c.precomputed_embeddings_path).read_bytes())}
        return {"backend": make_backend(c.encoder_backend_path).fingerprint}

    def embeddings(self) -> Path:
        path = self.out / EMBEDDINGS_CSV
        stage_hash = canonical_hash({"stage": "embeddings", "corpus": self.corpus_hash,
                                     "source": self._embedding_source_key(), "version": __version__})
        if _is_cached(path, stage_hash):
            self.log.record("embeddings", "cached", path)
            return path
        matrix, source = embedding_rows(self.manifest, self.config.encoder_backend_path,
                                        self.config.precomputed_embeddings_path, self.workers)
        table = Table(self.manifest.ids, None, matrix, list(embedder.COLUMN_NAMES))
        _commit(path, render_table_bytes(table), self._provenance("embeddings", stage_hash, source=source))
        self.log.record("embeddings", "computed", path)
        return path

    def fused(self) -> Path:
        return fuse_tables(self.features(), self.embeddings(), self.out / FUSED_CSV, self.log)

    def design(self) -> tuple[Path, LabeledDataset]:
        mode = self.config.representation_mode
        if mode == "feat":
            path = self.features()
            table = read_table(path, prefix="f", width=N_FEATURES, with_label=True)
        elif mode == "embed":
            path = self.embeddings()
            table = read_table(path, prefix="e", width=embedder.EMBED_DIM, with_label=False)
        else:
            path = self.fused()
            table = read_table(path, width=len(FUSED_COLUMNS), with_label=True)
        if table.ids != self.manifest.ids:
            raise ArtifactMismatchError(f"{path} rows do not match the manifest clip ids")
        dataset = LabeledDataset(
            table.matrix, np.array(self._labels(self.manifest)), tuple(e.subject_id for e in self.manifest.entries),
            tuple(table.columns), tuple(table.ids),
        )
        return path, dataset

    def cv(self) -> Path:
        design_path, dataset = self.design()
        c = self.config
        path = self.out / CV_REPORT
        design_sha = sha256_bytes(design_path.read_bytes())
        plan_key = {"scheme": c.cv_scheme, "seed": int(c.cv_seed),
                    "k": int(c.cv_folds) if c.cv_scheme == evaluation.STRATIFIED else None}
        stage_hash = canonical_hash({"stage": "cv", "design": design_sha, "pipeline": c.pipeline_spec().to_dict(),
                                     "plan": plan_key, "subjects": list(dataset.subject_ids),
                                     "version": __version__})
        if _is_cached(path, stage_hash):
            self.log.record("cv", "cached", path)
            return path
        if c.cv_scheme == evaluation.LOSO:
            plan = evaluation.make_loso_folds(dataset)
            plan = evaluation.FoldPlan(plan.folds, plan.scheme, int(c.cv_seed), plan.n_rows)
        else:
            plan = evaluation.make_stratified_kfold(dataset, int(c.cv_folds), int(c.cv_seed))
        result = evaluation.run_cv(dataset, c.pipeline_spec(), plan, workers=self.workers)
        report = result.to_dict()
        report.update({
            "config_hash": c.config_hash(),
            "pipeline_hash": c.pipeline_hash(),
            "layout_id": LAYOUT_ID,
            "representation_mode": c.representation_mode,
            "design_sha256": design_sha,
            "row_ids": list(dataset.row_ids),
            "source": f"cv:{c.cv_scheme}",
        })
        data = (evaluation.dumps(report) + "\n").encode("utf-8")
        _commit(path, data, self._provenance("cv", stage_hash))
        self.log.record("cv", "computed", path)
        return path

    def train(self) -> Path:
        design_path, dataset = self.design()
        c = self.config
        path = self.out / MODEL_FILE
        design_sha = sha256_bytes(design_path.read_bytes())
        stage_hash = canonical_hash({"stage": "train", "design": design_sha, "pipeline": c.pipeline_spec().to_dict(),
                                     "mode": c.representation_mode, "version": __version__})
        if _is_cached(path, stage_hash):
            self.log.record("train", "cached", path)
            return path
        fitted = evaluation.fit_pipeline(c.pipeline_spec(), dataset, c.cv_seed, range(dataset.n_rows))
        embedding_source = self._embedding_source_key() if c.uses_embeddings else None
        extra_meta = {
            "kind": "pipeline",
            "layout_id": LAYOUT_ID,
            "representation_mode": c.representation_mode,
            "pipeline": c.pipeline_spec().to_dict(),
            "config_hash": c.config_hash(),
            "pipeline_hash": c.pipeline_hash(),
            "design_sha256": design_sha,
            "n_input_columns": dataset.n_cols,
            "column_names": list(dataset.column_names),
            "embedding_source": embedding_source,
            "encoder_backend_path": c.encoder_backend_path,
        }
        arrays = {}
        if fitted.selector is not None:
            arrays["selector.indices"] = np.array(fitted.selector.chosen_indices, dtype=np.int64)
            arrays["selector.scores"] = np.array(fitted.selector.scores)
        if fitted.standardizer is not None:
            arrays["standardizer.mean"] = fitted.standardizer.mean
            arrays["standardizer.scale"] = fitted.standardizer.scale
        meta = {"classifier": classifiers.model_metadata(fitted.model)}
        meta.update(extra_meta)
        all_arrays = classifiers.to_arrays(fitted.model)
        all_arrays.update(arrays)
        _commit(path, modelfile.pack(meta, all_arrays), self._provenance("train", stage_hash))
        self.log.record("train", "computed", path)
        return path

    def predict_test(self, model_path: Path) -> Path | None:
        c = self.config
        if not c.test_manifest:
            return None
        out = self.out / PREDICTIONS_CSV
        test_manifest = load_manifest(c.test_manifest)
        test_hash = test_manifest.content_hash()
        stage_hash = canonical_hash({"stage": "predict", "model": sha256_bytes(model_path.read_bytes()),
                                     "test": test_hash, "version": __version__})
        if _is_cached(out, stage_hash):
            self.log.record("predict", "cached", out)
        else:
            rows = predict_rows(model_path, test_manifest, c.encoder_backend_path,
                                c.precomputed_embeddings_path, self.workers)
            _commit(out, render_predictions(rows), self._provenance("predict", stage_hash, test_hash=test_hash))
            self.log.record("predict", "computed", out)
        return out

    def test_reports(self, predictions: Path, cv_report: Path) -> None:
        test_manifest = load_manifest(self.config.test_manifest)
        if not test_manifest.labeled:
            return
        predicted = read_predictions(predictions)
        truth = [e.label for e in test_manifest.entries]
        pred = [predicted[e.clip_id] for e in test_manifest.entries]
        metrics = evaluation.metrics_from_predictions(np.array(truth), np.array(pred))
        c = self.config
        header = {"config_hash": c.config_hash(), "pipeline_hash": c.pipeline_hash(), "layout_id": LAYOUT_ID,
                  "representation_mode": c.representation_mode, "source": "test"}
        test_obj = dict(header, aggregate=metrics.to_dict(), n_rows=len(truth))
        data = (evaluation.dumps(test_obj) + "\n").encode("utf-8")
        path = self.out / TEST_METRICS
        stage_hash = canonical_hash({"stage": "test_metrics", "content": sha256_bytes(data)})
        if _is_cached(path, stage_hash):
            self.log.record("test_metrics", "cached", path)
        else:
            _commit(path, data, self._provenance("test_metrics", stage_hash))
            self.log.record("test_metrics", "computed", path)
        report = gap_report_from_files(path, cv_report)
        data = (evaluation.dumps(report) + "\n").encode("utf-8")
        gpath = self.out / GAP_REPORT
        stage_hash = canonical_hash({"stage": "gap_report", "content": sha256_bytes(data)})
        if _is_cached(gpath, stage_hash):
            self.log.record("gap_report", "cached", gpath)
        else:
            _commit(gpath, data, self._provenance("gap_report", stage_hash))
            self.log.record("gap_report", "computed", gpath)


# ----------------------------------------------------------- fuse / predict

def fuse_tables(features_path, embeddings_path, out_path, log_: StageLog | None = None) -> Path:
    """Join features and embeddings row by row into the 936-column table.

    Both inputs must come from the same corpus (matching ``corpus_hash`` in
    their sidecars when present) and list the same clip ids in the same order.
    """
    features_path, embeddings_path, out_path = Path(features_path), Path(embeddings_path), Path(out_path)
    fmeta, emeta = read_sidecar(features_path) or {}, read_sidecar(embeddings_path) or {}
    if fmeta.get("corpus_hash") and emeta.get("corpus_hash") and fmeta["corpus_hash"] != emeta["corpus_hash"]:
        raise ArtifactMismatchError(f"{features_path} and {embeddings_path} come from different corpora")
    if fmeta.get("layout_id", LAYOUT_ID) != LAYOUT_ID:
        raise LayoutMismatchError(f"{features_path}: layout {fmeta['layout_id']!r} != {LAYOUT_ID!r}")
    fsha = sha256_bytes(features_path.read_bytes())
    esha = sha256_bytes(embeddings_path.read_bytes())
    stage_hash = canonical_hash({"stage": "fuse", "features": fsha, "embeddings": esha, "version": __version__})
    if _is_cached(out_path, stage_hash):
        if log_ is not None:
            log_.record("fuse", "cached", out_path)
        return out_path
    ft = read_table(features_path, prefix="f", width=N_FEATURES)
    et = read_table(embeddings_path, prefix="e", width=embedder.EMBED_DIM)
    if ft.ids != et.ids:
        extra = sorted(set(ft.ids) ^ set(et.ids))
        detail = f"clip {extra[0]!r} present in only one table" if extra else "row order differs"
        raise ArtifactMismatchError(f"cannot fuse {features_path} and {embeddings_path}: {detail}")
    matrix = np.hstack([ft.matrix, et.matrix]) if ft.ids else np.zeros((0, len(FUSED_COLUMNS)))
    labels = ft.labels if ft.labels is not None else [None] * len(ft.ids)
    table = Table(ft.ids, labels, matrix, list(FUSED_COLUMNS))
    provenance = {
        "stage": "fuse", "stage_hash": stage_hash, "layout_id": LAYOUT_ID,
        "config_hash": fmeta.get("config_hash"), "corpus_hash": fmeta.get("corpus_hash"),
        "inputs": {"features": fsha, "embeddings": esha},
    }
    _commit(out_path, render_table_bytes(table), provenance)
    if log_ is not None:
        log_.record("fuse", "computed", out_path)
    return out_path


@dataclass(frozen=True)
class LoadedPipeline:
    fitted: evaluation.FittedPipeline
    meta: dict


def load_pipeline(model_path) -> LoadedPipeline:
    """Load a pipeline model file and refuse it if its feature layout is not this build's."""
    model, meta, arrays = classifiers.load_model(model_path)
    if meta.get("kind") != "pipeline":
        raise modelfile.ModelFileError(f"{model_path}: not a pipeline model file")
    if meta.get("layout_id") != LAYOUT_ID:
        raise LayoutMismatchError(
            f"{model_path}: model layout {meta.get('layout_id')!r} does not match extractor layout {LAYOUT_ID!r}"
        )
    spec = evaluation.PipelineSpec.from_dict(meta["pipeline"])
    selector = None
    if "selector.indices" in arrays:
        selector = ColumnSelector(tuple(int(i) for i in arrays["selector.indices"]),
                                  tuple(arrays["selector.scores"].tolist()), int(spec.select_k or 0))
    standardizer = None
    if "standardizer.mean" in arrays:
        standardizer = Standardizer(arrays["standardizer.mean"], arrays["standardizer.scale"])
    return LoadedPipeline(evaluation.FittedPipeline(spec, selector, standardizer, model), meta)


def predict_rows(model_path, manifest: CorpusManifest, backend_spec: str | None = None,
                 precomputed: str | None = None, workers: int = 1) -> list[tuple[str, int, float]]:
    loaded = load_pipeline(model_path)
    mode = loaded.meta["representation_mode"]
    if not manifest.entries:
        return []
    blocks = []
    if mode in ("feat", "combo"):
        blocks.append(feature_rows(manifest, workers))
    if mode in ("embed", "combo"):
        backend_spec = backend_spec or loaded.meta.get("encoder_backend_path")
        if not (backend_spec or precomputed):
            raise ConfigError(f"model mode {mode!r} needs an encoder backend or precomputed embeddings")
        blocks.append(embedding_rows(manifest, backend_spec, precomputed, workers)[0])
    X = np.hstack(blocks)
    if X.shape[1] != int(loaded.meta["n_input_columns"]):
        raise LayoutMismatchError(f"inputs have {X.shape[1]} columns, model expects {loaded.meta['n_input_columns']}")
    pred = loaded.fitted.predict(X)
    return [(cid, int(lab), float(s)) for cid, lab, s in zip(manifest.ids, pred.labels, pred.scores)]


def render_predictions(rows) -> bytes:
    lines = ["id,predicted_label,score"]
    lines.extend(f"{cid},{format_label(lab)},{format_float(score)}" for cid, lab, score in rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_predictions(path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {row["id"]: parse_label(row["predicted_label"]) for row in reader}


def predict_batch(model_path, manifest_path, out_path, backend_spec: str | None = None,
                  precomputed: str | None = None, workers: int = 1) -> Path:
    """Write ``id,predicted_label,score`` for every clip in the manifest."""
    manifest = load_manifest(manifest_path)
    rows = predict_rows(model_path, manifest, backend_spec, precomputed, workers)
    out_path = Path(out_path)
    model_meta = modelfile.read(model_path)[0]
    provenance = {
        "stage": "predict", "layout_id": LAYOUT_ID, "config_hash": model_meta.get("config_hash"),
        "model_sha256": sha256_bytes(Path(model_path).read_bytes()), "test_hash": manifest.content_hash(),
    }
    provenance["stage_hash"] = canonical_hash(provenance)
    _commit(out_path, render_predictions(rows), provenance)
    return out_path


# ---------------------------------------------------------------- gap reports

def _load_report(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: report not found")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if "aggregate" not in obj:
        raise ConfigError(f"{path}: no aggregate metrics block")
    return obj


def gap_report_from_files(a_path, b_path) -> dict:
    """Gap between two reports (CV or test) of the same pipeline; mixed pipelines are refused."""
    a, b = _load_report(a_path), _load_report(b_path)
    ha, hb = a.get("pipeline_hash"), b.get("pipeline_hash")
    if ha != hb:
        raise ArtifactMismatchError(f"{a_path} and {b_path} describe different pipelines ({ha} vs {hb})")
    if a.get("layout_id") != b.get("layout_id"):
        raise LayoutMismatchError(f"{a_path} and {b_path} use different feature layouts")
    ma = evaluation.EvalMetrics.from_dict(a["aggregate"])
    mb = evaluation.EvalMetrics.from_dict(b["aggregate"])
    report = evaluation.gap_report(ma, mb, a.get("source", str(a_path)), b.get("source", str(b_path)))
    out = report.to_dict()
    out.update({
        "pipeline_hash": ha,
        "layout_id": a.get("layout_id"),
        "config_hashes": {"a": a.get("config_hash"), "b": b.get("config_hash")},
        "aggregation": {"a": ma.aggregation, "b": mb.aggregation},
        "accuracy": {"a": ma.accuracy, "b": mb.accuracy},
        "baseline_delta_pp": {"a": round(evaluation.baseline_delta(ma.accuracy), 2),
                              "b": round(evaluation.baseline_delta(mb.accuracy), 2)},
    })
    return out


# ------------------------------------------------------------------ top level

@dataclass
class ExperimentResult:
    exit_status: int
    stages: dict
    artifacts: dict
    error: dict | None = None


def error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    clip_id = getattr(exc, "clip_id", None)
    if clip_id is not None:
        payload["clip_id"] = clip_id
    return payload


def classify_error(exc: BaseException) -> int:
    if isinstance(exc, ClipProcessingError):
        return EXIT_VALIDATION if exc.validation else EXIT_RUNTIME
    if isinstance(exc, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def run_stages(config: ExperimentConfig, until: str = "all") -> StageLog:
    """Run stages in order up to ``until`` (features, embeddings, fuse, cv, train, all)."""
    exp = Experiment(config, require_labels=until in ("cv", "train", "all"))
    if until == "features":
        exp.features()
    elif until == "embeddings":
        exp.embeddings()
    elif until == "fuse":
        exp.fused()
    elif until == "cv":
        exp.cv()
    elif until == "train":
        exp.train()
    elif until == "all":
        cv_path = exp.cv()
        model_path = exp.train()
        predictions = exp.predict_test(model_path)
        if predictions is not None:
            exp.test_reports(predictions, cv_path)
    else:
        raise ValueError(f"unknown stage {until!r}")
    return exp.log


def run_experiment(config: ExperimentConfig, until: str = "all", stderr=None) -> ExperimentResult:
    """Run the experiment; errors become an exit status and a JSON line on stderr."""
    stderr = stderr if stderr is not None else sys.stderr
    try:
        stage_log = run_stages(config, until)
    except Exception as exc:
        payload = error_payload(exc)
        stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return ExperimentResult(classify_error(exc), {}, {}, payload)
    return ExperimentResult(EXIT_OK, stage_log.statuses, stage_log.artifacts)


def write_config(path, config: ExperimentConfig) -> None:
    atomic_write_text(path, json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
