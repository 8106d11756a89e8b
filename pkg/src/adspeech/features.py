"""Conventional acoustic features: MFCC statistics plus voice-quality and ZCR measures.

The 168-value vector is laid out as

* 0-155: for each of 39 MFCC-family channels (c0-c12, their deltas, their
  delta-deltas), mean / sd / skewness / excess kurtosis
* 156-159: jitter local %, absolute s, RAP %, PPQ5 %
* 160-163: shimmer local %, dB, APQ3 %, APQ5 %
* 164-167: mean / sd / skewness / excess kurtosis of the per-frame ZCR
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from . import kernels
from .audio_io import CANONICAL_RATE, AudioClip, ClipTooShortError, FrameSeries, frame, frame_samples

N_FEATURES = 168
N_MFCC = 13
N_MEL = 26
MEL_LOG_FLOOR = 1e-10
DELTA_WINDOW = 2

FRAME_MS = 25.0
HOP_MS = 10.0

PITCH_FLOOR_HZ = 75.0
PITCH_CEILING_HZ = 500.0
VOICING_THRESHOLD = 0.45
RMS_GATE = 0.01
PITCH_WINDOW_MS = 40.0
PITCH_HOP_MS = 10.0
# smallest-lag local maximum within this fraction of the best peak wins (octave guard)
OCTAVE_RATIO = 0.9

LAYOUT_ID = (
    "adspeech-feat168/v1:mfcc13+d+dd(hamming,26mel-htk,log1e-10,dct2-ortho,reg2)x4moments;"
    "jitter4;shimmer4;zcr4;pitch(75-500Hz,ac>0.45,rms>0.01,40ms/10ms)"
)

MOMENT_NAMES = ("mean", "sd", "skew", "kurt")
JITTER_NAMES = ("jitter_local_pct", "jitter_abs_s", "jitter_rap_pct", "jitter_ppq5_pct")
SHIMMER_NAMES = ("shimmer_local_pct", "shimmer_db", "shimmer_apq3_pct", "shimmer_apq5_pct")


def _feature_names() -> tuple[str, ...]:
    names = []
    for prefix in ("mfcc", "d_mfcc", "dd_mfcc"):
        for c in range(N_MFCC):
            names.extend(f"{prefix}{c:02d}_{m}" for m in MOMENT_NAMES)
    names.extend(JITTER_NAMES)
    names.extend(SHIMMER_NAMES)
    names.extend(f"zcr_{m}" for m in MOMENT_NAMES)
    return tuple(names)


FEATURE_NAMES = _feature_names()
COLUMN_NAMES = tuple(f"f{i:03d}" for i in range(N_FEATURES))


class InsufficientFramesError(ValueError):
    pass


@dataclass(frozen=True)
class MomentStats:
    mean: float
    sd: float
    skewness: float
    kurtosis: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mean, self.sd, self.skewness, self.kurtosis)


@dataclass(frozen=True)
class PitchTrack:
    """Per-cycle periods (s) and peak amplitudes from voiced regions.

    ``segment_lengths`` partitions the cycles into contiguous voiced runs;
    perturbation measures never difference across a run boundary.
    """

    periods: np.ndarray
    peak_amplitudes: np.ndarray
    voiced_frame_fraction: float
    segment_lengths: tuple[int, ...] = ()

    def __post_init__(self):
        periods = np.asarray(self.periods, dtype=np.float64)
        amps = np.asarray(self.peak_amplitudes, dtype=np.float64)
        if periods.shape != amps.shape:
            raise ValueError("periods and peak_amplitudes must have equal length")
        segs = tuple(int(s) for s in self.segment_lengths) or ((periods.size,) if periods.size else ())
        if sum(segs) != periods.size:
            raise ValueError("segment_lengths must sum to the number of cycles")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "peak_amplitudes", amps)
        object.__setattr__(self, "segment_lengths", segs)

    @property
    def n_cycles(self) -> int:
        return self.periods.size

    def segments(self, values: np.ndarray):
        start = 0
        for length in self.segment_lengths:
            yield values[start:start + length]
            start += length


@dataclass(frozen=True)
class JitterMeasures:
    local_pct: float
    absolute_s: float
    rap_pct: float
    ppq5_pct: float
    insufficient: frozenset = frozenset()

    def as_array(self) -> np.ndarray:
        return np.array([self.local_pct, self.absolute_s, self.rap_pct, self.ppq5_pct])


@dataclass(frozen=True)
class ShimmerMeasures:
    local_pct: float
    db: float
    apq3_pct: float
    apq5_pct: float
    insufficient: frozenset = frozenset()

    def as_array(self) -> np.ndarray:
        return np.array([self.local_pct, self.db, self.apq3_pct, self.apq5_pct])


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout_id: str = LAYOUT_ID
    flags: tuple[str, ...] = ()
    clip_id: str | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must hold {N_FEATURES} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


# ---------------------------------------------------------------- statistics

def moment_stats(series) -> MomentStats:
    """The four population moments, with kurtosis reported as excess.

    Skewness and kurtosis are 0 when the variance is below 1e-12.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("moment_stats needs a nonempty series")
    if np.all(x == x[0]):
        return MomentStats(float(x[0]), 0.0, 0.0, 0.0)
    mean = float(np.mean(x))
    dev = x - mean
    sq = dev * dev
    m2 = float(np.mean(sq))
    if m2 < 1e-12:
        return MomentStats(mean, math.sqrt(m2), 0.0, 0.0)
    m3 = float(np.mean(sq * dev))
    m4 = float(np.mean(sq * sq))
    return MomentStats(mean, math.sqrt(m2), m3 / m2**1.5, m4 / (m2 * m2) - 3.0)


# ----------------------------------------------------------------------- ZCR

def zcr_per_frame(frames: FrameSeries) -> np.ndarray:
    """Zero crossings per second for every frame (zero counts as positive)."""
    if frames.n_frames == 0:
        raise ValueError("zcr_per_frame needs at least one frame")
    counts = kernels.zero_crossings(frames.frames)
    return counts.astype(np.float64) / frames.frame_duration_s


# ---------------------------------------------------------------------- MFCC

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(nfft: int, sample_rate: int, n_filters: int = N_MEL,
                   low_hz: float = 0.0, high_hz: float = 8000.0) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``[n_filters, nfft//2 + 1]``."""
    high_hz = min(high_hz, sample_rate / 2.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def deltas(coeffs: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over +-window frames with edge replication."""
    n = coeffs.shape[0]
    padded = np.concatenate([np.repeat(coeffs[:1], window, 0), coeffs, np.repeat(coeffs[-1:], window, 0)])
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(coeffs, dtype=np.float64)
    for k in range(1, window + 1):
        out += k * (padded[window + k:window + k + n] - padded[window - k:window - k + n])
    return out / denom


def cepstra(frames: FrameSeries, n_coeff: int = N_MFCC) -> np.ndarray:
    """Static MFCCs c0..c{n_coeff-1}, shape ``[n_frames, n_coeff]``."""
    nfft = 1 << (frames.frame_len - 1).bit_length()
    windowed = frames.frames * np.hamming(frames.frame_len)
    power = np.abs(np.fft.rfft(windowed, nfft, axis=1)) ** 2 / nfft
    energies = power @ mel_filterbank(nfft, frames.sample_rate_hz).T
    logmel = np.log(np.maximum(energies, MEL_LOG_FLOOR))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :n_coeff]


def mfcc_matrix(frames: FrameSeries, n_coeff: int = N_MFCC) -> np.ndarray:
    """MFCCs with first and second regression deltas, shape ``[n_frames, 3*n_coeff]``."""
    if frames.n_frames < 2 * DELTA_WINDOW + 1:
        raise InsufficientFramesError(
            f"{frames.n_frames} frames; deltas need at least {2 * DELTA_WINDOW + 1}"
        )
    static = cepstra(frames, n_coeff)
    d1 = deltas(static)
    d2 = deltas(d1)
    return np.hstack([static, d1, d2])


# --------------------------------------------------------------------- pitch

def _parabolic(a: float, b: float, c: float) -> tuple[float, float]:
    """Vertex offset in [-0.5, 0.5] and height of the parabola through three points."""
    denom = a - 2.0 * b + c
    if denom == 0.0:
        return 0.0, b
    delta = 0.5 * (a - c) / denom
    if not -0.5 <= delta <= 0.5:
        return 0.0, b
    return delta, b - 0.25 * (a - c) * delta


def _pick_lag(r: np.ndarray) -> int:
    """Index of the chosen autocorrelation peak, or -1 if the band has none."""
    if r.size < 3:
        return -1
    interior = (r[1:-1] >= r[:-2]) & (r[1:-1] > r[2:])
    peaks = np.flatnonzero(interior) + 1
    if peaks.size == 0:
        return -1
    best = r[peaks].max()
    if best <= 0.0:
        return -1
    return int(peaks[np.argmax(r[peaks] >= OCTAVE_RATIO * best)])


def frame_periods(samples: np.ndarray, rate: int):
    """Per-frame voicing decision and refined period (in samples) for the pitch grid."""
    win = int(round(PITCH_WINDOW_MS * rate / 1000.0))
    hop = int(round(PITCH_HOP_MS * rate / 1000.0))
    fs = frame_samples(samples, win, hop, rate)
    raw = fs.frames
    rms = np.sqrt(np.mean(raw * raw, axis=1))
    centered = raw - raw.mean(axis=1, keepdims=True)
    min_lag = int(math.ceil(rate / PITCH_CEILING_HZ))
    max_lag = int(math.floor(rate / PITCH_FLOOR_HZ))
    r = kernels.normalized_autocorr(centered, min_lag, max_lag)
    voiced = np.zeros(fs.n_frames, dtype=bool)
    period = np.zeros(fs.n_frames)
    for f in range(fs.n_frames):
        k = _pick_lag(r[f])
        if k < 0 or r[f, k] <= VOICING_THRESHOLD or rms[f] <= RMS_GATE:
            continue
        delta, _ = _parabolic(r[f, k - 1], r[f, k], r[f, k + 1])
        voiced[f] = True
        period[f] = min_lag + k + delta
    return fs, voiced, period


def _runs(mask: np.ndarray):
    f = 0
    n = mask.size
    while f < n:
        if not mask[f]:
            f += 1
            continue
        g = f
        while g + 1 < n and mask[g + 1]:
            g += 1
        yield f, g
        f = g + 1


def _mark_cycles(x: np.ndarray, start: int, stop: int, local_period, polarity: float):
    """Walk peak-to-peak through ``x[start:stop]``; returns refined peak times and heights."""
    p0 = local_period(start)
    first_end = min(stop, start + int(math.ceil(p0)))
    m = start + int(np.argmax(polarity * x[start:first_end]))
    times, heights = [], []
    while True:
        if 0 < m < x.size - 1:
            delta, h = _parabolic(polarity * x[m - 1], polarity * x[m], polarity * x[m + 1])
        else:
            delta, h = 0.0, polarity * x[m]
        times.append(m + delta)
        heights.append(abs(h))
        p = local_period(m)
        lo = m + int(math.floor(0.8 * p))
        hi = m + int(math.ceil(1.2 * p)) + 1
        if hi > stop:
            break
        m = lo + int(np.argmax(polarity * x[lo:hi]))
    return np.array(times), np.array(heights)


def track_pitch(clip: AudioClip) -> PitchTrack:
    """Autocorrelation pitch tracking followed by peak-to-peak cycle marking.

    Frames are 40 ms with a 10 ms hop; the lag search covers 75-500 Hz. A frame
    is voiced when its normalized autocorrelation peak exceeds 0.45 and its
    RMS exceeds 0.01. Within each run of voiced frames, cycles are marked from
    one waveform peak to the next, searching 0.8-1.2 local periods ahead, and
    each peak is refined parabolically.
    """
    x = clip.samples
    rate = clip.sample_rate_hz
    win = int(round(PITCH_WINDOW_MS * rate / 1000.0))
    if x.size < win:
        return PitchTrack(np.zeros(0), np.zeros(0), 0.0)
    fs, voiced, period = frame_periods(x, rate)
    min_period = 1.0 / PITCH_CEILING_HZ
    max_period = 1.0 / PITCH_FLOOR_HZ
    all_periods, all_amps, seg_lengths = [], [], []
    for f0, f1 in _runs(voiced):
        start = int(fs.offsets[f0])
        stop = int(fs.offsets[f1]) + fs.frame_len
        centres = fs.offsets[f0:f1 + 1] + fs.frame_len / 2.0
        run_periods = period[f0:f1 + 1]

        def local_period(pos, centres=centres, run_periods=run_periods):
            return run_periods[int(np.argmin(np.abs(centres - pos)))]

        seg = x[start:stop]
        polarity = 1.0 if seg.max() >= -seg.min() else -1.0
        times, heights = _mark_cycles(x, start, stop, local_period, polarity)
        if times.size < 2:
            continue
        periods = np.diff(times) / rate
        amps = heights[:-1]
        keep = (periods >= min_period) & (periods <= max_period)
        # an out-of-band cycle splits the run so no difference spans it
        start_idx = 0
        for idx in np.flatnonzero(~keep).tolist() + [periods.size]:
            if idx > start_idx:
                all_periods.append(periods[start_idx:idx])
                all_amps.append(amps[start_idx:idx])
                seg_lengths.append(idx - start_idx)
            start_idx = idx + 1
    voiced_fraction = float(voiced.mean()) if voiced.size else 0.0
    if not seg_lengths:
        return PitchTrack(np.zeros(0), np.zeros(0), voiced_fraction)
    return PitchTrack(np.concatenate(all_periods), np.concatenate(all_amps), voiced_fraction, tuple(seg_lengths))


# ------------------------------------------------------ perturbation measures

def _abs_diffs(track: PitchTrack, values: np.ndarray) -> np.ndarray:
    parts = [np.abs(np.diff(s)) for s in track.segments(values) if s.size >= 2]
    return np.concatenate(parts) if parts else np.zeros(0)


def _centred_deviation(track: PitchTrack, values: np.ndarray, width: int) -> np.ndarray:
    # |x_i - window mean| written as a sum of pairwise differences, so a
    # constant run gives exactly 0
    half = width // 2
    parts = []
    for s in track.segments(values):
        if s.size < width:
            continue
        core = s[half:s.size - half]
        acc = np.zeros(core.size)
        for off in range(-half, half + 1):
            if off:
                acc += core - s[half + off:s.size - half + off]
        parts.append(np.abs(acc) / width)
    return np.concatenate(parts) if parts else np.zeros(0)


def jitter_measures(track: PitchTrack) -> JitterMeasures:
    """Local (%), absolute (s), RAP (%) and PPQ5 (%) period perturbation.

    A measure with no usable cycle pairs/windows is 0 and named in
    ``insufficient``.
    """
    T = track.periods
    missing = set()
    mean_t = float(T.mean()) if T.size else 0.0
    diffs = _abs_diffs(track, T)
    if diffs.size == 0 or mean_t <= 0.0:
        missing.update(("local", "absolute"))
        local = absolute = 0.0
    else:
        absolute = float(diffs.mean())
        local = 100.0 * absolute / mean_t
    values = {}
    for name, width in (("rap", 3), ("ppq5", 5)):
        dev = _centred_deviation(track, T, width)
        if dev.size == 0 or mean_t <= 0.0:
            missing.add(name)
            values[name] = 0.0
        else:
            values[name] = 100.0 * float(dev.mean()) / mean_t
    return JitterMeasures(local, absolute, values["rap"], values["ppq5"], frozenset(missing))


def shimmer_measures(track: PitchTrack) -> ShimmerMeasures:
    """Local (%), dB, APQ3 (%) and APQ5 (%) amplitude perturbation.

    Pairs with a zero amplitude are left out of the dB term.
    """
    A = track.peak_amplitudes
    missing = set()
    mean_a = float(A.mean()) if A.size else 0.0
    diffs = _abs_diffs(track, A)
    if diffs.size == 0 or mean_a <= 0.0:
        missing.add("local")
        local = 0.0
    else:
        local = 100.0 * float(diffs.mean()) / mean_a
    ratios = []
    for s in track.segments(A):
        if s.size < 2:
            continue
        a, b = s[:-1], s[1:]
        ok = (a > 0) & (b > 0)
        ratios.append(np.abs(20.0 * np.log10(b[ok] / a[ok])))
    ratios = np.concatenate(ratios) if ratios else np.zeros(0)
    if ratios.size == 0:
        missing.add("db")
        db = 0.0
    else:
        db = float(ratios.mean())
    values = {}
    for name, width in (("apq3", 3), ("apq5", 5)):
        dev = _centred_deviation(track, A, width)
        if dev.size == 0 or mean_a <= 0.0:
            missing.add(name)
            values[name] = 0.0
        else:
            values[name] = 100.0 * float(dev.mean()) / mean_a
    return ShimmerMeasures(local, db, values["apq3"], values["apq5"], frozenset(missing))


# --------------------------------------------------------------- composition

def extract_features(clip: AudioClip, clip_id: str | None = None) -> FeatureVector:
    """The 168-value conventional feature vector of a 16 kHz clip of at least 1 s."""
    if clip.sample_rate_hz != CANONICAL_RATE:
        raise ValueError(f"extract_features expects {CANONICAL_RATE} Hz, got {clip.sample_rate_hz}")
    if clip.samples.size < CANONICAL_RATE:
        raise ClipTooShortError(f"clip is {clip.duration_s:.3f} s; need at least 1 s")
    frames = frame(clip, FRAME_MS, HOP_MS)
    mfcc = mfcc_matrix(frames)
    values = [v for c in range(mfcc.shape[1]) for v in moment_stats(mfcc[:, c]).as_tuple()]
    track = track_pitch(clip)
    jit = jitter_measures(track)
    shim = shimmer_measures(track)
    values.extend(jit.as_array())
    values.extend(shim.as_array())
    values.extend(moment_stats(zcr_per_frame(frames)).as_tuple())
    flags = tuple(sorted(f"jitter_{m}_insufficient_cycles" for m in jit.insufficient)) + tuple(
        sorted(f"shimmer_{m}_insufficient_cycles" for m in shim.insufficient)
    )
    return FeatureVector(np.array(values), LAYOUT_ID, flags, clip_id)
