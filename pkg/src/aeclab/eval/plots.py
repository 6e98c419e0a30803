"""Magnitude spectrogram export (before / after processing)."""

import numpy as np

from ..dsp import DEFAULT_FRAME, SAMPLE_RATE, stft


def magnitude_db(x, cfg=DEFAULT_FRAME, floor_db=-100.0):
    S = stft(np.asarray(x, dtype=np.float64), cfg)
    return np.maximum(20.0 * np.log10(np.abs(S) + 1e-12), floor_db)


def save_spectrograms(path, signals: dict, cfg=DEFAULT_FRAME, fs: int = SAMPLE_RATE, dyn_range=80.0):
    """Write stacked dB heatmaps, one panel per named signal, to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mags = {k: magnitude_db(v, cfg) for k, v in signals.items()}
    top = max(m.max() for m in mags.values())
    fig, axes = plt.subplots(len(mags), 1, figsize=(8, 2.4 * len(mags)), sharex=True, squeeze=False)
    for ax, (name, m) in zip(axes[:, 0], mags.items()):
        t_end = (m.shape[0] * cfg.hop) / fs
        im = ax.imshow(m.T, origin="lower", aspect="auto", vmin=top - dyn_range, vmax=top,
                       extent=(0, t_end, 0, fs / 2000), cmap="magma")
        ax.set_ylabel("kHz")
        ax.set_title(name)
    axes[-1, 0].set_xlabel("time (s)")
    fig.colorbar(im, ax=axes[:, 0].tolist(), label="dB")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
