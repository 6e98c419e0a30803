"""Pure-numpy versions of the compiled kernels (same arithmetic order where it matters)."""

import numpy as np


def nlms_filter(mic, far, w, mu, eps):
    n = mic.shape[0]
    taps = w.shape[0]
    out = np.empty(n, dtype=np.float64)
    # reversed far-end history so that xbuf[k] == far[i - k]
    xbuf = np.zeros(taps, dtype=np.float64)
    energy = 0.0
    for i in range(n):
        xi = far[i]
        xbuf[1:] = xbuf[:-1]
        xbuf[0] = xi
        energy += xi * xi
        if i >= taps:
            old = far[i - taps]
            energy -= old * old
        if energy < 0.0:
            energy = 0.0
        e = mic[i] - float(w @ xbuf)
        w += (mu * e / (energy + eps)) * xbuf
        out[i] = e
    return out


def rir_accumulate(out, delays, amps, half_width):
    if len(delays) == 0:
        return
    offsets = np.arange(-half_width + 1, half_width + 1)
    t = np.floor(delays)[:, None].astype(np.int64) + offsets[None, :]
    u = t - delays[:, None]
    keep = (t >= 0) & (t < out.shape[0]) & (np.abs(u) < half_width)
    pulse = np.sinc(u) * 0.5 * (1.0 + np.cos(np.pi * u / half_width))
    np.add.at(out, t[keep], (amps[:, None] * pulse)[keep])
