"""Objective metrics: ERLE, ESTOI and SI-SDR, plus the NLMS baseline."""

import numpy as np
from scipy.signal import firwin, kaiser_beta, resample_poly

from .._backend import kernels
from ..dsp import SAMPLE_RATE

METRIC_CAP_DB = 80.0

# ESTOI analysis constants (10 kHz internal rate)
ESTOI_FS = 10000
ESTOI_FRAME = 256
ESTOI_NFFT = 512
ESTOI_BANDS = 15
ESTOI_MIN_FREQ = 150.0
ESTOI_SEGMENT = 30  # frames per short-time segment (384 ms)
ESTOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"{what}: signals must be 1-D with equal lengths, got {a.shape} and {b.shape}")
    return a, b


def erle(mic, est_near) -> float:
    """10 log10 of mic energy over output energy; 80 dB when the output is silent."""
    y, s = _pair(mic, est_near, "erle")
    e_out = float(np.sum(s * s))
    e_in = float(np.sum(y * y))
    if e_in == 0.0:
        raise ValueError("erle: microphone signal is silent")
    if e_out == 0.0:
        return METRIC_CAP_DB
    return float(min(10.0 * np.log10(e_in / e_out), METRIC_CAP_DB))


def si_sdr(clean, processed) -> float:
    """Scale-invariant SDR in dB (capped at 80 dB for an exact scaled copy)."""
    s, x = _pair(clean, processed, "si_sdr")
    ss = float(s @ s)
    if ss == 0.0:
        raise ValueError("si_sdr: clean reference is silent")
    target = (float(x @ s) / ss) * s
    noise = x - target
    nn_ = float(noise @ noise)
    tt = float(target @ target)
    if tt == 0.0:
        return -METRIC_CAP_DB  # silent or orthogonal output
    if nn_ <= 1e-300 * max(ss, 1.0):
        return METRIC_CAP_DB
    return float(np.clip(10.0 * np.log10(tt / nn_), -METRIC_CAP_DB, METRIC_CAP_DB))


# -- ESTOI -------------------------------------------------------------------------

def _estoi_window():
    # symmetric Hann without its zero end points
    return np.hanning(ESTOI_FRAME + 2)[1:-1]


def _frames(x, hop):
    starts = np.arange(0, len(x) - ESTOI_FRAME, hop)
    idx = starts[:, None] + np.arange(ESTOI_FRAME)[None, :]
    return x[idx], starts


def _remove_silent_frames(x, y, hop=ESTOI_FRAME // 2):
    """Drop frames where the clean signal is > 40 dB below its loudest frame.

    The kept windowed frames of both signals are overlap-added back together.
    """
    w = _estoi_window()
    fx, _ = _frames(x, hop)
    fy, _ = _frames(y, hop)
    fx = fx * w
    fy = fy * w
    energy = 20.0 * np.log10(np.linalg.norm(fx, axis=1) + _EPS)
    keep = energy > energy.max() - ESTOI_DYN_RANGE
    fx, fy = fx[keep], fy[keep]
    n = len(fx)
    if n == 0:
        return np.zeros(0), np.zeros(0)
    out_len = (n - 1) * hop + ESTOI_FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(n):
        xs[i * hop : i * hop + ESTOI_FRAME] += fx[i]
        ys[i * hop : i * hop + ESTOI_FRAME] += fy[i]
    return xs, ys


def third_octave_bands(fs=ESTOI_FS, nfft=ESTOI_NFFT, n_bands=ESTOI_BANDS, min_freq=ESTOI_MIN_FREQ):
    """Band-to-bin 0/1 matrix ``(n_bands, nfft//2 + 1)`` and band centre frequencies."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    cf = min_freq * 2.0 ** (k / 3.0)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((n_bands, len(f)))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm, cf


def _band_envelopes(x):
    w = _estoi_window()
    fr, _ = _frames(x, ESTOI_FRAME // 2)
    spec = np.fft.rfft(fr * w, n=ESTOI_NFFT, axis=1)  # (frames, bins)
    obm, _ = third_octave_bands()
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def _normalize(a, axis):
    a = a - a.mean(axis=axis, keepdims=True)
    return a / (np.linalg.norm(a, axis=axis, keepdims=True) + _EPS)


def _resample(x, up, down):
    """Polyphase resampling with the classic Octave ``resample`` filter:
    Kaiser-windowed sinc, 60 dB rejection, 10 % transition band."""
    cutoff = 1.0 / (2 * max(up, down))
    half = int(np.ceil((60.0 - 8.0) / (28.714 * cutoff / 10.0)))
    h = firwin(2 * half + 1, 2 * cutoff, window=("kaiser", kaiser_beta(60.0)), scale=False)
    return resample_poly(x, up, down, window=h / np.sum(h))


def estoi(clean, processed, fs: int = SAMPLE_RATE) -> float:
    """Extended short-time objective intelligibility, in [-1, 1].

    Resamples to 10 kHz, removes silent frames, builds 15 one-third-octave
    band envelopes and averages the spectral correlation of row- then
    column-normalised 30-frame segments.
    """
    x, y = _pair(clean, processed, "estoi")
    if fs != ESTOI_FS:
        g = np.gcd(int(fs), ESTOI_FS)
        x = _resample(x, ESTOI_FS // g, int(fs) // g)
        y = _resample(y, ESTOI_FS // g, int(fs) // g)
    x, y = _remove_silent_frames(x, y)
    X = _band_envelopes(x) if len(x) > ESTOI_FRAME else np.zeros((ESTOI_BANDS, 0))
    Y = _band_envelopes(y) if len(y) > ESTOI_FRAME else np.zeros((ESTOI_BANDS, 0))
    n_frames = X.shape[1]
    if n_frames < ESTOI_SEGMENT:
        raise ValueError(
            f"estoi: only {n_frames} non-silent frames, need at least {ESTOI_SEGMENT} (about 0.4 s of speech)"
        )
    # segments (n_seg, bands, N)
    idx = np.arange(n_frames - ESTOI_SEGMENT + 1)[:, None] + np.arange(ESTOI_SEGMENT)[None, :]
    xs = np.transpose(X[:, idx], (1, 0, 2))
    ys = np.transpose(Y[:, idx], (1, 0, 2))
    xn = _normalize(_normalize(xs, axis=2), axis=1)
    yn = _normalize(_normalize(ys, axis=2), axis=1)
    d = np.sum(xn * yn, axis=(1, 2)) / ESTOI_SEGMENT
    return float(np.mean(d))


# -- NLMS ----------------------------------------------------------------------------

def nlms_baseline(mic, far_end, taps: int = 512, mu: float = 0.5, eps: float = 1e-8,
                  w0=None, return_weights: bool = False):
    """Sample-wise NLMS echo canceller; returns the error signal as the near-end estimate."""
    y, x = _pair(mic, far_end, "nlms_baseline")
    if taps < 1:
        raise ValueError("taps must be >= 1")
    if not 0 <= mu <= 2:
        raise ValueError("mu must be in [0, 2]")
    w = np.zeros(taps) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (taps,):
        raise ValueError("initial weights do not match taps")
    out = kernels.nlms_filter(np.ascontiguousarray(y), np.ascontiguousarray(x), w, float(mu), float(eps))
    out = np.asarray(out)
    return (out, w) if return_weights else out
