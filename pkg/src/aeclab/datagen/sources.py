"""Source audio for corpus generation.

The built-in generators are SYNTHETIC stand-ins (speech-like harmonic
babble, instrumental-like tone clusters, coloured room noise) so the lab
runs without any external corpus. Point a :class:`SourcePool` at
directories of 16 kHz mono WAVs to use real recordings instead.
"""

import functools
from pathlib import Path

import numpy as np

from ..dsp import SAMPLE_RATE, read_wav

# vowel formant sets (Hz) used to shape the harmonic spectrum
_VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [300, 870, 2240],
    [530, 1840, 2480],
    [570, 840, 2410],
    [440, 1020, 2240],
    [660, 1720, 2410],
])


def _envelope(n, fs, attack=0.02):
    a = max(1, min(n // 2, int(attack * fs)))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, a))
    env[:a] = ramp
    env[n - a :] = ramp[::-1]
    return env


def synth_speech(rng, seconds: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Speech-like signal: voiced syllables with formant-shaped harmonics,
    unvoiced noise bursts and pauses."""
    n_total = int(seconds * fs)
    out = np.zeros(n_total)
    f0_base = rng.uniform(90, 240)
    pos = int(rng.uniform(0.0, 0.2) * fs)
    while pos < n_total:
        dur = int(rng.uniform(0.12, 0.35) * fs)
        seg_len = min(dur, n_total - pos)
        if seg_len <= 16:
            break
        t = np.arange(seg_len) / fs
        if rng.random() < 0.8:
            f0 = f0_base * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 6.3)))
            f0 *= rng.uniform(0.9, 1.1)
            phase = 2 * np.pi * np.cumsum(f0) / fs
            formants = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.1)
            n_harm = int(7500 // (f0_base * 1.2))
            seg = np.zeros(seg_len)
            for k in range(1, n_harm + 1):
                fk = k * f0_base
                gain = sum(np.exp(-0.5 * ((fk - f) / (80 + 0.1 * f)) ** 2) for f in formants)
                gain = gain / k**0.5 + 0.01
                seg += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        else:
            seg = rng.standard_normal(seg_len)
            seg = np.diff(seg, prepend=0.0)  # tilt the burst toward high frequencies
            seg *= 0.3
        seg *= _envelope(seg_len, fs) * rng.uniform(0.3, 1.0)
        out[pos : pos + seg_len] += seg
        pos += seg_len + int(rng.uniform(0.03, 0.3) * fs)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def synth_music(rng, seconds: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Instrumental-like noise: overlapping decaying tone clusters."""
    n_total = int(seconds * fs)
    out = np.zeros(n_total)
    pos = 0
    while pos < n_total:
        dur = int(rng.uniform(0.2, 0.8) * fs)
        seg_len = min(dur + fs // 4, n_total - pos)
        t = np.arange(seg_len) / fs
        root = 110.0 * 2 ** (rng.integers(0, 24) / 12)
        chord = root * 2 ** (np.array([0, 4, 7, rng.choice([10, 11, 12])]) / 12)
        decay = np.exp(-t * rng.uniform(1.5, 6.0))
        for f in chord:
            for k in (1, 2, 3):
                if k * f < fs / 2 - 200:
                    out[pos : pos + seg_len] += decay * np.sin(2 * np.pi * k * f * t) / k**1.5
        pos += dur
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def synth_room_noise(rng, seconds: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Stationary coloured noise (1/f^a spectrum) with a weak mains hum."""
    n = int(seconds * fs)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec /= np.maximum(f, 20.0) ** (rng.uniform(0.3, 1.0) / 2)
    x = np.fft.irfft(spec, n=n)
    x /= np.max(np.abs(x))
    t = np.arange(n) / fs
    x += 0.05 * np.sin(2 * np.pi * rng.choice([50.0, 60.0]) * t)
    return x / np.max(np.abs(x))


_GENERATORS = {"speech": synth_speech, "music": synth_music, "noise": synth_room_noise}

# pool kinds and the generator behind each; near and far talkers are drawn
# from disjoint seeds
POOL_KINDS = {"near": "speech", "far": "speech", "music": "music", "noise": "noise"}
_KIND_CODES = {"near": 11, "far": 23, "music": 37, "noise": 41}


@functools.lru_cache(maxsize=512)
def synthetic_source(seed: int, kind: str, index: int, seconds: float) -> np.ndarray:
    rng = np.random.default_rng([seed, _KIND_CODES[kind], index])
    out = _GENERATORS[POOL_KINDS[kind]](rng, seconds)
    out.setflags(write=False)
    return out


class SourcePool:
    """Indexable pools of source audio for each kind.

    ``dirs`` maps a pool kind to a directory of WAV files; kinds without a
    directory use the synthetic generators with ``sizes[kind]`` entries.
    """

    def __init__(self, seed: int, sizes: dict, seconds: float, dirs: dict | None = None):
        self.seed = seed
        self.seconds = seconds
        self.files = {}
        self.sizes = dict(sizes)
        for kind, d in (dirs or {}).items():
            if not d:
                continue
            files = sorted(Path(d).glob("*.wav"))
            if not files:
                raise FileNotFoundError(f"no WAV files in {d} for the {kind} pool")
            self.files[kind] = files
            self.sizes[kind] = len(files)

    def size(self, kind: str) -> int:
        return self.sizes[kind]

    def source_id(self, kind: str, index: int) -> str:
        if kind in self.files:
            return f"wav:{self.files[kind][index]}"
        return f"synth:{kind}:{index}"

    def get(self, kind: str, index: int) -> np.ndarray:
        if kind in self.files:
            return _load_wav_cached(str(self.files[kind][index]))
        return synthetic_source(self.seed, kind, index, self.seconds)


@functools.lru_cache(maxsize=256)
def _load_wav_cached(path: str) -> np.ndarray:
    x = read_wav(path)
    x.setflags(write=False)
    return x


def load_source(source_id: str, seed: int, seconds: float) -> np.ndarray:
    """Resolve a manifest source id back to samples."""
    if source_id.startswith("wav:"):
        return _load_wav_cached(source_id[4:])
    _, kind, index = source_id.split(":")
    return synthetic_source(seed, kind, int(index), seconds)
