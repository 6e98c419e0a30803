import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal as sps

from aeclab import dsp
from aeclab.dsp import DEFAULT_FRAME, FrameConfig, istft, stft


def test_default_geometry():
    cfg = DEFAULT_FRAME
    assert (cfg.frame_len, cfg.hop, cfg.fft_size, cfg.n_bins) == (512, 128, 1024, 513)


def test_zero_second_frame_count_matches_direct_count():
    x = np.zeros(16000)
    S = stft(x)
    # direct count of frame starts 0, 128, ... with start + 512 <= 16000
    count = sum(1 for s in range(0, 16000, 128) if s + 512 <= 16000)
    assert count == 122
    assert S.shape == (122, 513)
    assert not np.any(S)


def test_short_signal_rejected():
    with pytest.raises(ValueError, match="shorter than one frame"):
        stft(np.zeros(511))


def test_periodic_hann_is_cola_at_quarter_hop():
    w2 = DEFAULT_FRAME.analysis_window() ** 2
    total = np.zeros(512 * 4)
    for s in range(0, total.size - 511, 128):
        total[s : s + 512] += w2
    interior = total[512:-512]
    # squared periodic Hann at 75% overlap sums to 1.5
    np.testing.assert_allclose(interior, 1.5, rtol=1e-12)


def test_sine_at_bin_centre_rectangular_window():
    cfg = FrameConfig(frame_len=512, hop=128, fft_size=512, window="boxcar")
    k = 37
    n = np.arange(2048)
    x = np.cos(2 * np.pi * k * n / 512)
    S = stft(x, cfg)
    energy = np.abs(S) ** 2
    assert np.all(energy[:, k] / energy.sum(axis=1) >= 0.99)


def test_round_trip_white_noise(rng):
    x = rng.standard_normal(32000)
    y = istft(stft(x))
    n = y.size
    sl = slice(512, n - 512)
    assert np.linalg.norm(y[sl] - x[sl]) / np.linalg.norm(x[sl]) <= 1e-6


@given(st.integers(1024, 6000), st.integers(0, 2**31 - 1))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x))
    sl = slice(512, y.size - 512)
    if sl.stop - sl.start > 0:
        assert np.linalg.norm(y[sl] - x[sl]) <= 1e-6 * np.linalg.norm(x[sl]) + 1e-300


def test_istft_zero_and_bin_mismatch():
    assert not np.any(istft(np.zeros((5, 513), complex)))
    with pytest.raises(ValueError, match="bins"):
        istft(np.zeros((5, 257), complex))


def test_single_frame_reproduced_up_to_window_normalisation(rng):
    frame = rng.standard_normal(512)
    S = stft(frame)
    assert S.shape == (1, 513)
    w = DEFAULT_FRAME.analysis_window()
    # one frame: out = w * (w * x) / max(w^2, 1e-10)
    expected = w * w * frame / np.maximum(w * w, 1e-10)
    np.testing.assert_allclose(istft(S), expected, atol=1e-12)


def test_linearity(rng):
    x, y = rng.standard_normal((2, 4000))
    a, b = 0.7, -1.3
    np.testing.assert_allclose(stft(a * x + b * y), a * stft(x) + b * stft(y), atol=1e-9)


def test_parseval_per_frame(rng):
    x = rng.standard_normal(3000)
    S = stft(x)
    w = DEFAULT_FRAME.analysis_window()
    for t in range(S.shape[0]):
        fr = x[t * 128 : t * 128 + 512] * w
        full = np.fft.fft(fr, 1024)
        time_e = np.sum(fr**2)
        # rebuild the two-sided energy from the one-sided spectrum
        spec_e = (np.abs(S[t, 0]) ** 2 + np.abs(S[t, -1]) ** 2 + 2 * np.sum(np.abs(S[t, 1:-1]) ** 2)) / 1024
        assert abs(time_e - spec_e) <= 1e-6 * time_e
        assert abs(np.sum(np.abs(full) ** 2) / 1024 - time_e) <= 1e-6 * time_e


def test_batched_stft_matches_single(rng):
    x = rng.standard_normal((3, 2000))
    S = stft(x)
    for i in range(3):
        np.testing.assert_array_equal(S[i], stft(x[i]))


# -- filters --------------------------------------------------------------------------

def test_highpass_removes_dc():
    x = np.ones(16000)
    y = dsp.biquad_filter(x, "highpass", 80.0)
    tail = y[8000:]
    assert dsp.rms(tail) <= 1e-3 * dsp.rms(x)


def test_bandpass_passes_in_band_tone():
    f = 1000.0
    n = np.arange(32000)
    x = np.sin(2 * np.pi * f * n / 16000)
    y = dsp.biquad_filter(x, "bandpass", 100.0, 7500.0)
    gain_db = 20 * np.log10(dsp.rms(y[16000:]) / dsp.rms(x[16000:]))
    # oracle: evaluate the designed transfer function at the tone frequency
    sos = sps.butter(2, [100.0, 7500.0], btype="bandpass", fs=16000, output="sos")
    _, h = sps.sosfreqz(sos, worN=[f], fs=16000)
    assert abs(gain_db - 20 * np.log10(abs(h[0]))) < 0.05
    assert abs(gain_db) <= 1.0


def test_filters_zero_in_zero_out_and_validation():
    assert not np.any(dsp.biquad_filter(np.zeros(100), "highpass", 80.0))
    with pytest.raises(ValueError):
        dsp.biquad_filter(np.zeros(10), "bandpass", 7500.0, 100.0)
    with pytest.raises(ValueError):
        dsp.biquad_filter(np.zeros(10), "highpass", 9000.0)
    with pytest.raises(ValueError):
        dsp.biquad_filter(np.zeros(10), "lowpass", 100.0)


# -- convolution and delay ------------------------------------------------------------

def test_convolve_matches_direct_sum(rng):
    x = rng.standard_normal(256)
    h = rng.standard_normal(32)
    direct = np.array([sum(h[k] * x[n - k] for k in range(32) if n - k >= 0) for n in range(256)])
    np.testing.assert_allclose(dsp.convolve(x, h), direct, atol=1e-12)


def test_convolve_unit_delay(rng):
    x = rng.standard_normal(50)
    y = dsp.convolve(x, [0.0, 1.0])
    np.testing.assert_allclose(y, np.concatenate([[0.0], x[:-1]]), atol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200))
def test_convolve_identity_property(xs):
    x = np.array(xs)
    np.testing.assert_allclose(dsp.convolve(x, [1.0]), x, atol=1e-9 * (1 + np.abs(x).max()))


def test_convolve_empty_ir():
    with pytest.raises(ValueError, match="empty"):
        dsp.convolve(np.ones(4), [])


def test_delay(rng):
    x = rng.standard_normal(1000)
    np.testing.assert_array_equal(dsp.delay(x, 0), x)
    y = dsp.delay(x, 8.0)
    np.testing.assert_array_equal(y[128:], x[:-128])
    assert not np.any(y[:128])
    assert np.isclose(np.sum(y**2), np.sum(x**2) - np.sum(x[-128:] ** 2))
    with pytest.raises(ValueError):
        dsp.delay(x, -1)


# -- tilt and level -------------------------------------------------------------------

def test_tilt_zero_is_identity(rng):
    x = rng.standard_normal(4000)
    np.testing.assert_allclose(dsp.spectral_tilt(x, 0.0), x, atol=1e-9)


def test_tilt_slope_per_octave():
    g = dsp.tilt_gain(np.array([1000.0, 2000.0, 4000.0, 500.0]), 2.0)
    db = 20 * np.log10(g)
    np.testing.assert_allclose(db, [0.0, 2.0, 4.0, -2.0], atol=1e-12)


def test_tilt_applied_to_tones():
    n = np.arange(16000)
    for f, expect in ((1000.0, 0.0), (2000.0, -8.0 / 3.0), (4000.0, -16.0 / 3.0)):
        x = np.sin(2 * np.pi * f * n / 16000)
        y = dsp.spectral_tilt(x, -8.0 / 3.0)
        assert abs(20 * np.log10(dsp.rms(y) / dsp.rms(x)) - expect) < 1e-6


def test_tilt_bounds():
    with pytest.raises(ValueError):
        dsp.spectral_tilt(np.ones(8), 3.0)


def test_normalize_level(rng):
    x = rng.standard_normal(100)
    assert np.isclose(np.max(np.abs(dsp.normalize_level(x, 0.0))), 1.0)
    y = dsp.normalize_level(x, -20.0)
    assert np.isclose(np.max(np.abs(y)), 0.1)
    c = y / x
    np.testing.assert_allclose(c, c[0])
    with pytest.raises(ValueError):
        dsp.normalize_level(np.zeros(5), -10)
    with pytest.raises(ValueError):
        dsp.normalize_level(x, -30)


def test_wav_round_trip(tmp_path, rng):
    x = rng.uniform(-0.9, 0.9, 1600)
    dsp.write_wav(tmp_path / "a.wav", x)
    np.testing.assert_array_equal(dsp.read_wav(tmp_path / "a.wav"), x.astype(np.float32))
    dsp.write_wav(tmp_path / "b.wav", x, "pcm16")
    assert np.max(np.abs(dsp.read_wav(tmp_path / "b.wav") - x)) <= 1 / 32768 + 1e-12


def test_wav_rejects_other_rates(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "c.wav", 8000, np.zeros(10, np.float32))
    with pytest.raises(ValueError, match="sample rate"):
        dsp.read_wav(tmp_path / "c.wav")
