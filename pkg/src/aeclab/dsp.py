"""Signal-processing primitives: framing, STFT/ISTFT, filters, delay, levels, WAV I/O.

Waveforms are plain 1-D float arrays at ``SAMPLE_RATE``. Spectrograms are
complex arrays shaped ``(..., frames, bins)``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps
from scipy.io import wavfile

SAMPLE_RATE = 16000

TILT_BOUND = 8.0 / 3.0
TILT_PIVOT_HZ = 1000.0
TILT_FLOOR_HZ = 62.5  # four octaves below the pivot; gain is held constant below


@dataclass(frozen=True)
class FrameConfig:
    frame_len: int = 512
    hop: int = 128
    fft_size: int = 1024
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        # periodic window (fftbins=True) so Hann is COLA at frame_len / 4
        return sps.get_window(self.window, self.frame_len, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.frame_len) // self.hop

    def n_samples(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_len


DEFAULT_FRAME = FrameConfig()


def stft(x, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Windowed, zero-padded real FFT of every full frame.

    Works on the last axis, so a ``(batch, samples)`` array gives
    ``(batch, frames, bins)``. Trailing samples that do not fill a whole
    frame are dropped.
    """
    x = np.asarray(x)
    if x.shape[-1] < cfg.frame_len:
        raise ValueError(
            f"signal has {x.shape[-1]} samples, shorter than one frame ({cfg.frame_len})"
        )
    frames = sliding_window_view(x, cfg.frame_len, axis=-1)[..., :: cfg.hop, :]
    return np.fft.rfft(frames * cfg.analysis_window(), n=cfg.fft_size, axis=-1)


def window_power_sum(n_frames: int, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    win_sq = cfg.analysis_window() ** 2
    total = np.zeros(cfg.n_samples(n_frames))
    for t in range(n_frames):
        total[t * cfg.hop : t * cfg.hop + cfg.frame_len] += win_sq
    return total


def istft(spec, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Each frame is inverse transformed, cut back to ``frame_len``, windowed
    again and overlap-added; the sum is divided by the overlap-added squared
    window. Output length is ``(frames - 1) * hop + frame_len``.
    """
    spec = np.asarray(spec)
    if spec.shape[-1] != cfg.n_bins:
        raise ValueError(
            f"spectrogram has {spec.shape[-1]} bins but frame config expects {cfg.n_bins}"
        )
    n_frames = spec.shape[-2]
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., : cfg.frame_len]
    frames = frames * cfg.analysis_window()
    out = np.zeros(spec.shape[:-2] + (cfg.n_samples(n_frames),))
    for t in range(n_frames):
        out[..., t * cfg.hop : t * cfg.hop + cfg.frame_len] += frames[..., t, :]
    norm = window_power_sum(n_frames, cfg)
    return out / np.maximum(norm, 1e-10)


def biquad_filter(x, kind: str, f_low: float, f_high: float | None = None, fs: int = SAMPLE_RATE):
    """Second-order Butterworth high-pass or band-pass filter (SOS form)."""
    nyq = fs / 2
    if kind == "highpass":
        if not 0 < f_low < nyq:
            raise ValueError(f"cutoff {f_low} Hz outside (0, {nyq})")
        sos = sps.butter(2, f_low, btype="highpass", fs=fs, output="sos")
    elif kind == "bandpass":
        if f_high is None or not 0 < f_low < f_high < nyq:
            raise ValueError(f"band edges ({f_low}, {f_high}) must satisfy 0 < low < high < {nyq}")
        sos = sps.butter(2, [f_low, f_high], btype="bandpass", fs=fs, output="sos")
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return sps.sosfilt(sos, np.asarray(x, dtype=np.float64))


def convolve(x, ir) -> np.ndarray:
    """Linear convolution truncated to ``len(x)`` so mixture channels stay aligned."""
    x = np.asarray(x, dtype=np.float64)
    ir = np.asarray(ir, dtype=np.float64)
    if ir.size == 0:
        raise ValueError("impulse response is empty")
    if x.size == 0:
        return x.copy()
    return sps.fftconvolve(x, ir, mode="full")[: x.size]


def delay(x, delay_ms: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    if delay_ms < 0:
        raise ValueError("delay must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    shift = int(round(delay_ms * fs / 1000.0))
    out = np.zeros_like(x)
    if shift < x.size:
        out[shift:] = x[: x.size - shift]
    return out


def tilt_gain(freqs, slope: float) -> np.ndarray:
    """Linear magnitude of a ``slope`` dB/octave tilt, 0 dB at the 1 kHz pivot."""
    f = np.maximum(np.asarray(freqs, dtype=np.float64), TILT_FLOOR_HZ)
    return 10.0 ** (slope * np.log2(f / TILT_PIVOT_HZ) / 20.0)


def spectral_tilt(x, slope: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Zero-phase spectral tilt of ``slope`` dB per octave about 1 kHz.

    Applied as a magnitude shaping of the whole-signal spectrum, so the
    slope holds exactly at every frequency above the 62.5 Hz floor.
    """
    if not -TILT_BOUND - 1e-12 <= slope <= TILT_BOUND + 1e-12:
        raise ValueError(f"tilt slope {slope} outside [-8/3, 8/3]")
    x = np.asarray(x, dtype=np.float64)
    if slope == 0.0:
        return x.copy()
    spec = np.fft.rfft(x)
    spec *= tilt_gain(np.fft.rfftfreq(x.size, 1.0 / fs), slope)
    return np.fft.irfft(spec, n=x.size)


def normalize_level(x, target_dbfs: float) -> np.ndarray:
    """Scale so the peak absolute sample sits at ``target_dbfs``."""
    if not -25.0 <= target_dbfs <= 0.0:
        raise ValueError(f"target level {target_dbfs} dBFS outside [-25, 0]")
    x = np.asarray(x, dtype=np.float64)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak == 0.0:
        raise ValueError("cannot normalize an all-zero signal")
    return x * (10.0 ** (target_dbfs / 20.0) / peak)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def read_wav(path) -> np.ndarray:
    """Read a mono 16 kHz WAV (16-bit PCM or 32-bit float) as float64 samples."""
    fs, data = wavfile.read(path)
    if fs != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {fs} Hz, expected {SAMPLE_RATE} (no resampling)")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise ValueError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, x, subtype: str = "float32") -> None:
    x = np.asarray(x)
    if subtype == "float32":
        data = x.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767)
        data = data.astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(path, SAMPLE_RATE, data)
