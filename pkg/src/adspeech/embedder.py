"""Fixed-size clip embeddings from a frozen sequence encoder.

A waveform is split into chunks of at most 320000 samples, each chunk's
final hidden states are averaged over time, and the chunk vectors are
averaged (unweighted) into one 768-vector.
"""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import CANONICAL_RATE, AudioClip
from .tables import Table, TableError, read_table, write_table

log = logging.getLogger(__name__)

EMBED_DIM = 768
MAX_CHUNK = 320_000
ENCODER_INPUT = "waveform"
ENCODER_OUTPUT = "hidden_states"
COLUMN_NAMES = tuple(f"e{i:03d}" for i in range(EMBED_DIM))

SOURCE_ENCODER = "encoder-inference"
SOURCE_PRECOMPUTED = "precomputed-file"


class EncoderError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source: str = SOURCE_ENCODER
    clip_id: str | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (EMBED_DIM,):
            raise ValueError(f"embedding must hold {EMBED_DIM} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding has non-finite entries")
        if self.source not in (SOURCE_ENCODER, SOURCE_PRECOMPUTED):
            raise ValueError(f"unknown embedding source {self.source!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


class EncoderBackend(ABC):
    """A frozen encoder: float32 ``[1, T]`` at 16 kHz in, ``[1, n_t, 768]`` out.

    One inference at a time per instance.
    """

    hidden_size: int = EMBED_DIM
    max_input_len: int | None = None

    @abstractmethod
    def infer(self, waveform: np.ndarray) -> np.ndarray: ...

    @property
    @abstractmethod
    def fingerprint(self) -> str:
        """Stable identity used for cache keys."""


class StubEncoder(EncoderBackend):
    """Deterministic stand-in encoder for tests and the synthetic corpus.

    Emits one step per 320 samples (400-sample receptive field). Each step
    maps eight frame descriptors (log energy and ZCR plus six log band
    energies) through a fixed random projection followed by ``tanh``.
    """

    receptive = 400
    stride = 320
    _bands = (0, 250, 500, 1000, 2000, 4000, 8001)

    def __init__(self, seed: int = 1234):
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self._w = rng.normal(scale=0.25, size=(8, EMBED_DIM))
        self._b = rng.normal(scale=0.1, size=EMBED_DIM)
        self._loc = np.array([-6.0, 0.15, -8.0, -8.0, -8.0, -8.0, -8.0, -8.0])
        self._scale = np.array([3.0, 0.15, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0])

    @property
    def fingerprint(self) -> str:
        return f"stub-encoder/v1/seed={self.seed}"

    def infer(self, waveform: np.ndarray) -> np.ndarray:
        x = np.asarray(waveform, dtype=np.float64).reshape(-1)
        if x.size < self.receptive:
            x = np.pad(x, (0, self.receptive - x.size))
        n_t = (x.size - self.receptive) // self.stride + 1
        frames = np.lib.stride_tricks.sliding_window_view(x, self.receptive)[:: self.stride][:n_t]
        energy = np.log(np.mean(frames * frames, axis=1) + 1e-8)
        signs = frames >= 0
        zcr = np.mean(signs[:, 1:] != signs[:, :-1], axis=1)
        power = np.abs(np.fft.rfft(frames * np.hanning(self.receptive), 512, axis=1)) ** 2 / 512
        freqs = np.fft.rfftfreq(512, 1.0 / CANONICAL_RATE)
        bands = [
            np.log(power[:, (freqs >= lo) & (freqs < hi)].sum(axis=1) + 1e-8)
            for lo, hi in zip(self._bands[:-1], self._bands[1:])
        ]
        desc = np.column_stack([energy, zcr] + bands)
        hidden = np.tanh(((desc - self._loc) / self._scale) @ self._w + self._b)
        return hidden[None].astype(np.float32)


class OnnxEncoder(EncoderBackend):
    """Encoder served from a serialized ONNX graph via onnxruntime.

    The graph must take ``waveform`` (float32 ``[1, T]``) and produce
    ``hidden_states`` (float32 ``[1, n_t, 768]``); this is checked on load.
    """

    def __init__(self, path, max_input_len: int | None = None):
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise EncoderError("onnxruntime is required for ONNX encoders (pip install onnxruntime)") from exc
        self.path = Path(path)
        if not self.path.is_file():
            raise EncoderError(f"{self.path}: encoder file not found")
        self.max_input_len = max_input_len
        opts = ort.SessionOptions()
        opts.intra_op_num_threads = 1
        try:
            self._session = ort.InferenceSession(str(self.path), opts, providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise EncoderError(f"{self.path}: cannot load encoder graph: {exc}") from exc
        self._check_contract()
        self._fingerprint = hashlib.sha256(self.path.read_bytes()).hexdigest()

    def _check_contract(self):
        inputs = {i.name: i for i in self._session.get_inputs()}
        outputs = {o.name: o for o in self._session.get_outputs()}
        if ENCODER_INPUT not in inputs:
            raise EncoderError(f"{self.path}: graph has no input named {ENCODER_INPUT!r} (has {sorted(inputs)})")
        if ENCODER_OUTPUT not in outputs:
            raise EncoderError(f"{self.path}: graph has no output named {ENCODER_OUTPUT!r} (has {sorted(outputs)})")
        inp, out = inputs[ENCODER_INPUT], outputs[ENCODER_OUTPUT]
        if inp.type != "tensor(float)" or len(inp.shape) != 2:
            raise EncoderError(f"{self.path}: input {ENCODER_INPUT!r} must be float32 rank-2, got {inp.type} {inp.shape}")
        if out.type != "tensor(float)" or len(out.shape) != 3:
            raise EncoderError(f"{self.path}: output {ENCODER_OUTPUT!r} must be float32 rank-3, got {out.type} {out.shape}")
        last = out.shape[-1]
        if isinstance(last, int) and last != EMBED_DIM:
            raise EncoderError(f"{self.path}: hidden size {last}, expected {EMBED_DIM}")

    @property
    def fingerprint(self) -> str:
        return f"onnx/{self._fingerprint}"

    def infer(self, waveform: np.ndarray) -> np.ndarray:
        x = np.asarray(waveform, dtype=np.float32).reshape(1, -1)
        return self._session.run([ENCODER_OUTPUT], {ENCODER_INPUT: x})[0]


def chunk_waveform(samples, max_len: int = MAX_CHUNK) -> list[np.ndarray]:
    """Greedy left-to-right split into pieces of ``max_len`` (the last may be shorter)."""
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("cannot chunk an empty waveform")
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    return [x[i:i + max_len] for i in range(0, x.size, max_len)]


def _pooled(hidden, backend: EncoderBackend) -> np.ndarray:
    h = np.asarray(hidden)
    if h.ndim != 3 or h.shape[0] != 1 or h.shape[1] < 1:
        raise EncoderError(f"encoder returned shape {h.shape}, expected [1, n_t, {EMBED_DIM}]")
    if h.shape[2] != EMBED_DIM:
        raise EncoderError(f"encoder hidden size {h.shape[2]} does not match declared {EMBED_DIM}")
    if not np.all(np.isfinite(h)):
        raise EncoderError("encoder returned non-finite hidden states")
    return h[0].astype(np.float64).mean(axis=0)


def encode_chunks(chunks, backend: EncoderBackend, clip_id: str | None = None) -> EmbeddingVector:
    """Time-mean each chunk's hidden states, then take the unweighted mean over chunks."""
    if not chunks:
        raise ValueError("no chunks to encode")
    vectors = []
    for chunk in chunks:
        if backend.max_input_len is not None and len(chunk) > backend.max_input_len:
            raise EncoderError(f"chunk of {len(chunk)} samples exceeds backend limit {backend.max_input_len}")
        try:
            hidden = backend.infer(np.asarray(chunk, dtype=np.float32)[None, :])
        except EncoderError:
            raise
        except Exception as exc:
            raise EncoderError(f"encoder inference failed: {exc}") from exc
        vectors.append(_pooled(hidden, backend))
    stacked = np.vstack(vectors)
    pooled = stacked.mean(axis=0)
    lengths = np.array([len(c) for c in chunks], dtype=np.float64)
    if lengths.min() != lengths.max():
        weighted = (stacked * lengths[:, None]).sum(axis=0) / lengths.sum()
        log.info(
            "clip %s: unweighted chunk mean differs from duration-weighted mean by up to %.3g "
            "(chunk lengths %s)",
            clip_id, float(np.max(np.abs(pooled - weighted))), lengths.astype(int).tolist(),
        )
    return EmbeddingVector(pooled, SOURCE_ENCODER, clip_id)


def extract_embedding(clip: AudioClip, backend: EncoderBackend, clip_id: str | None = None,
                      max_len: int = MAX_CHUNK) -> EmbeddingVector:
    if clip.sample_rate_hz != CANONICAL_RATE:
        raise ValueError(f"encoder expects {CANONICAL_RATE} Hz audio, got {clip.sample_rate_hz}")
    return encode_chunks(chunk_waveform(clip.samples, max_len), backend, clip_id)


def embeddings_table(embeddings: dict[str, EmbeddingVector]) -> Table:
    ids = list(embeddings)
    matrix = np.vstack([embeddings[i].values for i in ids]) if ids else np.zeros((0, EMBED_DIM))
    return Table(ids, None, matrix, list(COLUMN_NAMES))


def write_embeddings(path, embeddings: dict[str, EmbeddingVector]) -> None:
    write_table(path, embeddings_table(embeddings))


def load_precomputed(path) -> dict[str, EmbeddingVector]:
    """Read an ``id,e000..e767`` CSV into ``{id: EmbeddingVector}``."""
    table = read_table(path, prefix="e", width=EMBED_DIM, with_label=False)
    out = {}
    for clip_id, row in zip(table.ids, table.matrix):
        try:
            out[clip_id] = EmbeddingVector(row, SOURCE_PRECOMPUTED, clip_id)
        except ValueError as exc:
            raise TableError(f"{path}: id {clip_id!r}: {exc}") from None
    return out
