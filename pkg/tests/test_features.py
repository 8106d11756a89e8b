from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adspeech.audio_io import ClipTooShortError, FrameSeries, frame
from adspeech.features import (
    FEATURE_NAMES, LAYOUT_ID, N_FEATURES, InsufficientFramesError, PitchTrack, deltas, extract_features,
    jitter_measures, mfcc_matrix, moment_stats, shimmer_measures, track_pitch, zcr_per_frame,
)

from conftest import clip_of, sine


# ------------------------------------------------------------ reference MFCC

def reference_mfcc(frames: np.ndarray, rate: int = 16000, n_mel: int = 26, n_coeff: int = 13) -> np.ndarray:
    """Independent MFCC: explicit window, DFT matrix, interpolated triangles, cosine-sum DCT."""
    n = frames.shape[1]
    nfft = 1
    while nfft < n:
        nfft *= 2
    idx = np.arange(n)
    window = 0.54 - 0.46 * np.cos(2 * np.pi * idx / (n - 1))
    k = np.arange(nfft // 2 + 1)
    dft = np.exp(-2j * np.pi * np.outer(k, idx) / nfft)
    spectrum = (frames * window) @ dft.T
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / nfft

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def inv_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = mel(8000.0)
    edges = [inv_mel(top * i / (n_mel + 1)) for i in range(n_mel + 2)]
    freqs = k * rate / nfft
    bank = np.array([np.interp(freqs, edges[m:m + 3], [0.0, 1.0, 0.0], left=0.0, right=0.0) for m in range(n_mel)])
    logmel = np.log(np.maximum(power @ bank.T, 1e-10))
    out = np.zeros((frames.shape[0], n_coeff))
    for c in range(n_coeff):
        basis = np.cos(np.pi * c * (2 * np.arange(n_mel) + 1) / (2 * n_mel))
        scale = math.sqrt(1.0 / n_mel) if c == 0 else math.sqrt(2.0 / n_mel)
        out[:, c] = scale * (logmel @ basis)
    return out


def test_mfcc_of_440hz_sine_matches_reference():
    fs = frame(clip_of(sine(440.0)), 25.0, 10.0)
    ours = mfcc_matrix(fs)[:, :13]
    ref = reference_mfcc(fs.frames)
    np.testing.assert_allclose(ours, ref, rtol=1e-3, atol=1e-9)


def test_mfcc_of_noise_matches_reference():
    rng = np.random.default_rng(5)
    fs = frame(clip_of(rng.uniform(-0.5, 0.5, 8000)), 25.0, 10.0)
    np.testing.assert_allclose(mfcc_matrix(fs)[:, :13], reference_mfcc(fs.frames), rtol=1e-3, atol=1e-9)


def test_mfcc_shape_and_zero_input():
    fs = frame(clip_of(np.zeros(16000)), 25.0, 10.0)
    m = mfcc_matrix(fs)
    assert m.shape == (98, 39)
    assert np.all(m[:, :13] == m[0, :13])
    assert np.all(m[:, 13:] == 0.0)


def test_mfcc_needs_five_frames():
    fs = frame(clip_of(np.zeros(400 + 3 * 160)), 25.0, 10.0)
    assert fs.n_frames == 4
    with pytest.raises(InsufficientFramesError):
        mfcc_matrix(fs)


def test_delta_of_constant_track_is_exactly_zero():
    track = np.full((20, 3), 7.25)
    assert np.all(deltas(track) == 0.0)


def test_delta_of_linear_ramp_is_its_slope_away_from_edges():
    track = np.arange(30, dtype=np.float64)[:, None] * 0.5
    d = deltas(track)
    np.testing.assert_allclose(d[2:-2, 0], 0.5, rtol=0, atol=1e-15)


# ----------------------------------------------------------------------- ZCR

def frames_of(matrix, rate=16000):
    matrix = np.asarray(matrix, dtype=np.float64)
    return FrameSeries(matrix, matrix.shape[1], matrix.shape[1], rate, np.arange(matrix.shape[0]))


def test_zcr_of_constant_is_zero():
    assert np.all(zcr_per_frame(frames_of(np.full((3, 400), 0.3))) == 0.0)


def test_zcr_of_square_wave():
    t = np.arange(16000)
    square = np.where((t // 80) % 2 == 0, 0.5, -0.5)
    rates = zcr_per_frame(frame(clip_of(square), 25.0, 10.0))
    assert np.all(np.abs(rates - 200.0) <= 40.0)


@given(arrays(np.float64, (3, 50), elements=st.floats(-1, 1, allow_nan=False)))
def test_zcr_matches_brute_force(matrix):
    expected = []
    for row in matrix:
        count = sum(1 for a, b in zip(row[:-1], row[1:]) if (a >= 0) != (b >= 0))
        expected.append(count / (50 / 16000))
    np.testing.assert_allclose(zcr_per_frame(frames_of(matrix)), expected, rtol=1e-15)


# ------------------------------------------------------------------- moments

def four_pass_moments(x):
    n = len(x)
    mean = sum(x) / n
    m2 = sum((v - mean) ** 2 for v in x) / n
    m3 = sum((v - mean) ** 3 for v in x) / n
    m4 = sum((v - mean) ** 4 for v in x) / n
    if m2 < 1e-12:
        return mean, math.sqrt(m2), 0.0, 0.0
    return mean, math.sqrt(m2), m3 / m2 ** 1.5, m4 / m2 ** 2 - 3.0


def test_moments_of_constant_series():
    assert moment_stats([2.5] * 7).as_tuple() == (2.5, 0.0, 0.0, 0.0)


def test_moments_of_bernoulli_half():
    assert moment_stats([0.0, 1.0]).as_tuple() == pytest.approx((0.5, 0.5, 0.0, -2.0), abs=1e-15)


def test_moments_reject_empty():
    with pytest.raises(ValueError):
        moment_stats([])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=60))
def test_moments_match_four_pass_oracle(values):
    got = moment_stats(values).as_tuple()
    want = four_pass_moments(values)
    if want[1] ** 2 < 1e-12 or got[1] ** 2 < 1e-12:
        # at the variance floor the two sides may land on opposite sides of it
        np.testing.assert_allclose(got[:2], want[:2], rtol=1e-9, atol=1e-9)
        return
    scale = max(1.0, abs(want[2]), abs(want[3]))
    np.testing.assert_allclose(got[:2], want[:2], rtol=1e-12, atol=1e-12 * max(1.0, abs(want[0])))
    np.testing.assert_allclose(got[2:], want[2:], rtol=1e-9, atol=1e-9 * scale)


def test_moments_match_oracle_to_1e12_on_well_conditioned_data():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = list(rng.standard_normal(int(rng.integers(2, 200))))
        np.testing.assert_allclose(moment_stats(x).as_tuple(), four_pass_moments(x), rtol=0, atol=1e-12)


# --------------------------------------------------------- jitter / shimmer

def alternating(a, b, n=1000):
    return np.where(np.arange(n) % 2 == 0, a, b).astype(np.float64)


def test_periodic_track_has_no_jitter():
    track = PitchTrack(np.full(50, 0.005), np.ones(50), 1.0)
    j = jitter_measures(track)
    assert j.as_array().tolist() == [0.0, 0.0, 0.0, 0.0]
    assert not j.insufficient


def test_alternating_periods_closed_form():
    track = PitchTrack(alternating(0.0050, 0.0051), np.ones(1000), 1.0)
    j = jitter_measures(track)
    assert j.local_pct == pytest.approx(100 * 0.1 / 5.05, rel=1e-6)
    assert j.local_pct == pytest.approx(1.9802, abs=5e-5)
    assert j.rap_pct == pytest.approx(100 * (0.1 * 2 / 3) / 5.05, rel=1e-6)
    assert j.rap_pct == pytest.approx(1.3201, abs=5e-5)
    assert j.absolute_s == pytest.approx(1e-4, rel=1e-6)


def test_constant_amplitudes_have_no_shimmer():
    track = PitchTrack(np.full(40, 0.005), np.full(40, 0.4), 1.0)
    assert shimmer_measures(track).as_array().tolist() == [0.0, 0.0, 0.0, 0.0]


def test_alternating_amplitudes_closed_form():
    track = PitchTrack(np.full(1000, 0.005), alternating(1.0, 1.1), 1.0)
    s = shimmer_measures(track)
    assert s.local_pct == pytest.approx(100 * 0.1 / 1.05, rel=1e-6)
    assert s.local_pct == pytest.approx(9.5238, abs=5e-5)
    assert s.db == pytest.approx(20 * math.log10(1.1), rel=1e-6)
    assert s.db == pytest.approx(0.8279, abs=5e-5)


@pytest.mark.parametrize("n,missing_jitter", [
    (0, {"local", "absolute", "rap", "ppq5"}),
    (1, {"local", "absolute", "rap", "ppq5"}),
    (2, {"rap", "ppq5"}),
    (4, {"ppq5"}),
    (5, set()),
])
def test_insufficient_cycles_give_zero_and_flag(n, missing_jitter):
    track = PitchTrack(np.linspace(0.004, 0.006, n), np.linspace(0.5, 0.7, n), 0.5)
    j = jitter_measures(track)
    assert set(j.insufficient) == missing_jitter
    values = dict(zip(("local", "absolute", "rap", "ppq5"), j.as_array()))
    for name in missing_jitter:
        assert values[name] == 0.0


def test_zero_amplitudes_left_out_of_db_term():
    track = PitchTrack(np.full(4, 0.005), np.array([0.0, 1.0, 1.1, 0.0]), 1.0)
    assert shimmer_measures(track).db == pytest.approx(20 * math.log10(1.1))


def test_differences_never_span_segments():
    track = PitchTrack(np.array([0.005, 0.005, 0.008, 0.008]), np.ones(4), 1.0, (2, 2))
    assert jitter_measures(track).local_pct == 0.0


# --------------------------------------------------------------------- pitch

def test_pitch_of_200hz_sine():
    track = track_pitch(clip_of(sine(200.0)))
    assert abs(np.mean(1.0 / track.periods) - 200.0) < 1.0
    assert track.voiced_frame_fraction > 0.9


def test_pitch_of_silence_is_empty():
    track = track_pitch(clip_of(np.zeros(16000)))
    assert track.voiced_frame_fraction == 0.0
    assert track.n_cycles == 0


def test_uniform_noise_is_mostly_unvoiced():
    rng = np.random.default_rng(1234)
    track = track_pitch(clip_of(rng.uniform(-0.3, 0.3, 32000)))
    assert track.voiced_frame_fraction < 0.2


@pytest.mark.parametrize("f0", [80.0, 120.0, 310.0, 450.0])
def test_pitch_band_and_octave(f0):
    x = sine(f0, seconds=1.0) + 0.3 * sine(2 * f0, seconds=1.0)
    track = track_pitch(clip_of(x))
    assert np.all(track.periods >= 1 / 500) and np.all(track.periods <= 1 / 75)
    assert abs(np.median(1.0 / track.periods) - f0) < 1.0


# ----------------------------------------------------------------- features

def voiced_signal(seed=3, seconds=2.0, f0=150.0, amplitude=0.6):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * 16000)) / 16000
    phase = 2 * np.pi * f0 * t + 0.3 * np.sin(2 * np.pi * 2.0 * t)
    x = sum(np.sin(k * phase) / k**2 for k in range(1, 5))
    x = x + 0.01 * rng.standard_normal(t.size)
    return amplitude * x / np.max(np.abs(x))


def fixtures():
    rng = np.random.default_rng(99)
    impulse = np.zeros(16000)
    impulse[8000] = 1.0
    clipped = np.clip(3.0 * sine(220.0), -0.5, 0.5)
    tiny = np.concatenate([np.zeros(8000), 1e-4 * rng.standard_normal(8000)])
    return {
        "silence": np.zeros(16000),
        "impulse": impulse,
        "clipped": clipped,
        "tiny_noise": tiny,
        "noise": rng.uniform(-0.5, 0.5, 20000),
        "voiced": voiced_signal(),
        "full_scale_square": np.where(np.arange(16000) % 100 < 50, 1.0, -1.0),
    }


@pytest.mark.parametrize("name", list(fixtures()))
def test_feature_vector_contract(name):
    fv = extract_features(clip_of(fixtures()[name]), name)
    assert fv.values.shape == (N_FEATURES,)
    assert np.all(np.isfinite(fv.values))
    assert fv.layout_id == LAYOUT_ID
    assert fv.clip_id == name


def test_features_are_bit_identical_across_runs():
    clip = clip_of(voiced_signal())
    assert extract_features(clip).values.tobytes() == extract_features(clip).values.tobytes()


def test_tiny_noise_takes_sentinel_path():
    fv = extract_features(clip_of(fixtures()["tiny_noise"]))
    assert np.all(fv.values[156:164] == 0.0)
    assert len(fv.flags) == 8
    assert "jitter_local_insufficient_cycles" in fv.flags


def test_feature_layout_names():
    assert len(FEATURE_NAMES) == 168
    assert FEATURE_NAMES[:4] == ("mfcc00_mean", "mfcc00_sd", "mfcc00_skew", "mfcc00_kurt")
    assert [n.split("_")[0] for n in FEATURE_NAMES[156:160]] == ["jitter"] * 4
    assert [n.split("_")[0] for n in FEATURE_NAMES[160:164]] == ["shimmer"] * 4
    assert all(n.startswith("zcr") for n in FEATURE_NAMES[164:])


def test_feature_values_follow_layout():
    clip = clip_of(voiced_signal())
    fv = extract_features(clip)
    fs = frame(clip, 25.0, 10.0)
    m = mfcc_matrix(fs)
    assert fv.values[4 * 14:4 * 15].tolist() == list(moment_stats(m[:, 14]).as_tuple())
    track = track_pitch(clip)
    assert fv.values[156:160].tolist() == jitter_measures(track).as_array().tolist()
    assert fv.values[160:164].tolist() == shimmer_measures(track).as_array().tolist()
    assert fv.values[164:].tolist() == list(moment_stats(zcr_per_frame(fs)).as_tuple())


def test_short_clip_rejected():
    with pytest.raises(ClipTooShortError):
        extract_features(clip_of(np.zeros(15999)))


def test_wrong_rate_rejected():
    with pytest.raises(ValueError):
        extract_features(clip_of(np.zeros(16000), rate=8000))


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 1.0))
def test_amplitude_scaling_invariance(c):
    # c stays above the point where the scaled clip would fall under the RMS voicing gate
    base = voiced_signal(amplitude=0.9)
    a = extract_features(clip_of(base))
    b = extract_features(clip_of(c * base))
    np.testing.assert_allclose(b.values[156:160], a.values[156:160], rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(b.values[164:], a.values[164:], rtol=0, atol=0)
    shimmer_ratio_slots = [160, 162, 163]
    np.testing.assert_allclose(b.values[shimmer_ratio_slots], a.values[shimmer_ratio_slots], rtol=1e-6)


def harmonic_tone(f0, n):
    t = np.arange(n) / 16000
    return 0.5 * sum(np.sin(2 * np.pi * k * f0 * t) / k for k in (1, 2, 3))


def test_time_shift_by_one_hop_on_hop_commensurate_tone():
    # 200 Hz repeats every 80 samples, so every analysis frame is the same
    x = np.tile(harmonic_tone(200.0, 80), 700)
    a = extract_features(clip_of(x[:48000]))
    b = extract_features(clip_of(x[160:48160]))
    rel = np.abs(a.values - b.values) / np.maximum(np.abs(a.values), 1e-6)
    assert np.max(rel) < 0.01


def test_time_shift_by_one_hop_on_generic_tone():
    # with a period that does not divide the hop, delta statistics are edge
    # dominated; the frame-level channels still move by under 1 %
    x = harmonic_tone(153.0, 64160)
    a = extract_features(clip_of(x[:48000])).values
    b = extract_features(clip_of(x[160:48160])).values
    slots = [4 * c + m for c in range(13) for m in (0, 1)] + [156, 157, 158, 159, 164, 165]
    rel = np.abs(a[slots] - b[slots]) / np.maximum(np.abs(a[slots]), 1e-6)
    assert np.max(rel) < 0.01


def test_track_pitch_kernel_backends_agree(kernel_backend):
    track = track_pitch(clip_of(voiced_signal()))
    assert abs(np.median(1.0 / track.periods) - 150.0) < 15.0
    assert track.voiced_frame_fraction > 0.8
