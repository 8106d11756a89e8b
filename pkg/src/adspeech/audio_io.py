"""WAV decoding to a canonical rate, then short-time framing.

Everything downstream consumes mono float64 samples in [-1, 1] at
:data:`CANONICAL_RATE`.
"""

from __future__ import annotations

import math
import os
import struct
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

CANONICAL_RATE = 16000

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    """Base class for audio decoding failures."""


class WavNotFoundError(AudioError, FileNotFoundError):
    pass


class MalformedWavError(AudioError, ValueError):
    pass


class UnsupportedCodecError(AudioError, ValueError):
    pass


class ClipTooShortError(AudioError, ValueError):
    pass


def _readonly(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AudioClip:
    """Mono clip with its rate and corpus metadata.

    ``label`` is 1 for AD (the positive class), 0 for CN and None when unknown.
    """

    samples: np.ndarray
    sample_rate_hz: int
    subject_id: str = ""
    label: int | None = None

    def __post_init__(self):
        samples = _readonly(self.samples)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples, sample_rate_hz: int | None = None) -> "AudioClip":
        return AudioClip(
            samples,
            self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            self.subject_id,
            self.label,
        )


@dataclass(frozen=True)
class FrameSeries:
    frames: np.ndarray
    frame_len: int
    hop_len: int
    sample_rate_hz: int
    offsets: np.ndarray = field(repr=False, default=None)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_duration_s(self) -> float:
        return self.frame_len / self.sample_rate_hz


def _parse_fmt(body: bytes, path) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise MalformedWavError(f"{path}: fmt chunk is {len(body)} bytes, need at least 16")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == _FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedWavError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack("<H", body[24:26])[0]
    if tag not in (_FORMAT_PCM, _FORMAT_FLOAT):
        raise UnsupportedCodecError(f"{path}: unsupported codec tag 0x{tag:04x}; only PCM and IEEE float")
    if tag == _FORMAT_PCM and bits not in (8, 16, 24, 32):
        raise UnsupportedCodecError(f"{path}: unsupported PCM bit depth {bits}")
    if tag == _FORMAT_FLOAT and bits != 32:
        raise UnsupportedCodecError(f"{path}: unsupported float bit depth {bits}; only 32-bit")
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"{path}: {channels} channels; only mono or stereo")
    if rate == 0:
        raise MalformedWavError(f"{path}: sample rate is 0")
    if block_align != channels * bits // 8:
        raise MalformedWavError(f"{path}: block align {block_align} inconsistent with {channels}x{bits} bits")
    return tag, channels, rate, bits


def _decode(raw: bytes, tag: int, bits: int) -> np.ndarray:
    if tag == _FORMAT_FLOAT:
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / float(1 << 23)
    return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)


def load_wav(path, subject_id: str = "", label: int | None = None) -> AudioClip:
    """Decode a RIFF/WAVE file into a mono clip scaled to [-1, 1].

    Integer PCM is divided by ``2**(bits-1)`` (8-bit is offset by 128 first);
    stereo is averaged sample-wise.
    """
    path = Path(path)
    if not path.is_file():
        raise WavNotFoundError(f"{path}: no such file")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE container")
    pos = 12
    fmt = None
    raw = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body, path)
        elif chunk_id == b"data":
            if len(body) < size:
                raise MalformedWavError(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            raw = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if raw is None:
        raise MalformedWavError(f"{path}: missing data chunk")
    tag, channels, rate, bits = fmt
    frame_bytes = channels * bits // 8
    usable = len(raw) - len(raw) % frame_bytes
    samples = _decode(raw[:usable], tag, bits)
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise MalformedWavError(f"{path}: non-finite float samples")
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples, rate, subject_id, label)


def write_wav(path, samples, sample_rate_hz: int) -> None:
    """Write mono 16-bit PCM (samples clipped to [-1, 1]), atomically."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with wave.open(str(tmp), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate_hz))
        w.writeframes(pcm.tobytes())
    os.replace(tmp, path)


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited rate conversion (polyphase windowed-sinc).

    The anti-aliasing cutoff sits at the lower of the two Nyquist rates.
    """
    if target_hz is None or int(target_hz) <= 0:
        raise ValueError("target_hz must be a positive integer")
    target_hz = int(target_hz)
    if target_hz == clip.sample_rate_hz:
        return clip
    ratio = Fraction(target_hz, clip.sample_rate_hz)
    y = resample_poly(clip.samples, ratio.numerator, ratio.denominator, window=("kaiser", 8.0))
    return clip.with_samples(np.clip(y, -1.0, 1.0), target_hz)


def to_canonical(clip: AudioClip) -> AudioClip:
    return resample(clip, CANONICAL_RATE)


def _ms_to_samples(ms: float, rate: int) -> int:
    return int(math.floor(ms * rate / 1000.0 + 0.5))


def frame(clip: AudioClip, window_ms: float, hop_ms: float) -> FrameSeries:
    """Slice a clip into overlapping frames; the partial tail is dropped."""
    if not (window_ms >= hop_ms > 0):
        raise ValueError("need window_ms >= hop_ms > 0")
    rate = clip.sample_rate_hz
    frame_len = _ms_to_samples(window_ms, rate)
    hop_len = max(1, _ms_to_samples(hop_ms, rate))
    return frame_samples(clip.samples, frame_len, hop_len, rate)


def frame_samples(samples: np.ndarray, frame_len: int, hop_len: int, rate: int) -> FrameSeries:
    n = samples.size
    if frame_len <= 0 or n < frame_len:
        raise ClipTooShortError(f"clip has {n} samples, shorter than one {frame_len}-sample window")
    n_frames = (n - frame_len) // hop_len + 1
    view = np.lib.stride_tricks.sliding_window_view(samples, frame_len)[::hop_len][:n_frames]
    frames = np.ascontiguousarray(view, dtype=np.float64)
    frames.setflags(write=False)
    offsets = np.arange(n_frames) * hop_len
    return FrameSeries(frames, frame_len, hop_len, rate, offsets)
