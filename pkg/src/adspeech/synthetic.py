"""Deterministic synthetic data standing in for the access-restricted corpus.

Two generators live here:

* ``generate_corpus`` writes a small two-class speech-like WAV corpus plus a
  manifest. "cn" clips have a lively, clean pitch contour; "ad" clips have a
  flat contour with strong cycle-to-cycle perturbation and more breath noise.
* ``make_two_cluster_dataset`` builds a feature matrix with two Gaussian
  clusters a fixed number of standard deviations apart, for harness tests.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import CANONICAL_RATE, write_wav
from .representation import LabeledDataset
from .tables import atomic_write_text

MANIFEST_COLUMNS = ("id", "path", "label", "subject_id")
N_HARMONICS = 6


@dataclass(frozen=True)
class VoiceProfile:
    """Generator settings for one synthetic speaker class."""

    f0_range_hz: tuple[float, float]
    intonation_depth: float
    jitter: float
    shimmer: float
    noise_level: float


PROFILES = {
    "cn": VoiceProfile((110.0, 210.0), 0.18, 0.002, 0.02, 0.002),
    "ad": VoiceProfile((110.0, 210.0), 0.02, 0.03, 0.18, 0.03),
}


def synthesize_voice(duration_s: float, profile: VoiceProfile, rng: np.random.Generator,
                     sample_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Glottal-like pulse train built cycle by cycle, gated into syllables.

    Each cycle is a sum of harmonics of its own period, so cycles join without
    discontinuities and the perturbation of period and amplitude is exact.
    """
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    f0_base = rng.uniform(*profile.f0_range_hz)
    rate_hz = rng.uniform(1.0, 3.0)
    phase0 = rng.uniform(0, 2 * np.pi)
    weights = 1.0 / np.arange(1, N_HARMONICS + 1) ** 2
    pos = 0.0
    while True:
        t = pos / sample_rate
        f0 = f0_base * (1.0 + profile.intonation_depth * np.sin(2 * np.pi * rate_hz * t + phase0))
        period = sample_rate / f0 * (1.0 + profile.jitter * rng.standard_normal())
        amp = 0.5 * max(0.05, 1.0 + profile.shimmer * rng.standard_normal())
        start = int(np.ceil(pos))
        stop = min(int(np.ceil(pos + period)), n)
        if start >= n:
            break
        local = (np.arange(start, stop) - pos) / period
        k = np.arange(1, N_HARMONICS + 1)
        out[start:stop] = amp * (np.sin(2 * np.pi * np.outer(local, k)) @ weights)
        pos += period
    # syllable gating: voiced stretches of 150-400 ms separated by 40-120 ms pauses
    gate = np.zeros(n)
    cursor = int(rng.uniform(0.02, 0.08) * sample_rate)
    ramp = int(0.01 * sample_rate)
    while cursor < n:
        length = int(rng.uniform(0.15, 0.4) * sample_rate)
        seg = np.ones(min(length, n - cursor))
        r = min(ramp, seg.size // 2)
        if r:
            seg[:r] = np.linspace(0.0, 1.0, r)
            seg[-r:] = np.linspace(1.0, 0.0, r)
        gate[cursor:cursor + seg.size] = seg
        cursor += length + int(rng.uniform(0.04, 0.12) * sample_rate)
    signal = out * gate + profile.noise_level * rng.standard_normal(n)
    return np.clip(signal, -0.99, 0.99)


@dataclass(frozen=True)
class ManifestRow:
    clip_id: str
    path: str
    label: str
    subject_id: str


def render_manifest(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in rows:
        writer.writerow([r.clip_id, r.path, r.label, r.subject_id])
    return buf.getvalue()


def generate_corpus(out_dir, n_clips: int = 20, seed: int = 7, n_test: int = 0,
                    duration_range_s: tuple[float, float] = (2.0, 3.0)) -> dict[str, Path]:
    """Write ``n_clips`` training clips (half per class) and ``n_test`` test clips.

    Returns the manifest paths (``train`` and, when ``n_test`` > 0, ``test``).
    Clip paths in the manifests are relative to ``out_dir``. Output depends
    only on the arguments.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifests = {}
    for split, count, prefix in (("train", n_clips, "s"), ("test", n_test, "t")):
        if count <= 0:
            continue
        rows = []
        for i in range(count):
            label = "cn" if i % 2 == 0 else "ad"
            clip_rng = np.random.default_rng(rng.integers(0, 2**63))
            duration = clip_rng.uniform(*duration_range_s)
            samples = synthesize_voice(duration, PROFILES[label], clip_rng)
            clip_id = f"{prefix}{i:03d}"
            rel = f"audio/{clip_id}.wav"
            write_wav(out_dir / rel, samples, CANONICAL_RATE)
            rows.append(ManifestRow(clip_id, rel, label, f"subj-{prefix}{i:03d}"))
        path = out_dir / f"{split}_manifest.csv"
        atomic_write_text(path, render_manifest(rows))
        manifests[split] = path
    return manifests


def make_two_cluster_dataset(n_per_class: int = 83, n_features: int = 10, separation: float = 6.0,
                             seed: int = 0) -> LabeledDataset:
    """Unit-variance Gaussian clusters whose means are ``separation`` sd apart.

    The mean offset points along a random unit direction; rows alternate
    between the classes and every row gets its own subject id.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(n_features)
    direction /= np.linalg.norm(direction)
    labels = np.arange(2 * n_per_class) % 2
    matrix = rng.standard_normal((labels.size, n_features)) + np.outer(labels, separation * direction)
    subjects = tuple(f"subj{i:04d}" for i in range(labels.size))
    columns = tuple(f"x{j:03d}" for j in range(n_features))
    return LabeledDataset(matrix, labels, subjects, columns)


def nearest_mean_loso_accuracy(matrix, labels) -> float:
    """Leave-one-out accuracy of the nearest-class-mean rule, computed row by row."""
    X = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels)
    correct = 0
    for i in range(X.shape[0]):
        keep = np.arange(X.shape[0]) != i
        d = {}
        for c in (0, 1):
            members = X[keep & (y == c)]
            d[c] = float(np.sum((X[i] - members.mean(axis=0)) ** 2))
        correct += int((1 if d[1] < d[0] else 0) == y[i])
    return correct / X.shape[0]


__all__ = [
    "MANIFEST_COLUMNS",
    "PROFILES",
    "VoiceProfile",
    "generate_corpus",
    "make_two_cluster_dataset",
    "nearest_mean_loso_accuracy",
    "synthesize_voice",
]
