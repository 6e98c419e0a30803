# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors aeclab._kernels_py operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, floor, M_PI, fabs

cnp.import_array()


def nlms_filter(double[::1] mic, double[::1] far, double[::1] w, double mu, double eps):
    """Sample-by-sample NLMS; adapts ``w`` in place and returns the error signal."""
    cdef Py_ssize_t n = mic.shape[0]
    cdef Py_ssize_t taps = w.shape[0]
    cdef Py_ssize_t i, k, kmax
    cdef double energy = 0.0
    cdef double y_hat, e, g, old
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr

    for i in range(n):
        energy += far[i] * far[i]
        if i >= taps:
            old = far[i - taps]
            energy -= old * old
        if energy < 0.0:
            energy = 0.0
        kmax = taps if i + 1 > taps else i + 1
        y_hat = 0.0
        for k in range(kmax):
            y_hat += w[k] * far[i - k]
        e = mic[i] - y_hat
        g = mu * e / (energy + eps)
        for k in range(kmax):
            w[k] += g * far[i - k]
        out[i] = e
    return out_arr


def rir_accumulate(double[::1] out, double[::1] delays, double[::1] amps, int half_width):
    """Add Hann-windowed sinc pulses at fractional ``delays`` (in samples) into ``out``."""
    cdef Py_ssize_t n_img = delays.shape[0]
    cdef Py_ssize_t n_out = out.shape[0]
    cdef Py_ssize_t j, t, start
    cdef double tau, u, s, win
    for j in range(n_img):
        tau = delays[j]
        start = <Py_ssize_t>floor(tau) - half_width + 1
        for t in range(start, start + 2 * half_width):
            if t < 0 or t >= n_out:
                continue
            u = t - tau
            if fabs(u) >= half_width:
                continue
            if u == 0.0:
                s = 1.0
            else:
                s = sin(M_PI * u) / (M_PI * u)
            win = 0.5 * (1.0 + cos(M_PI * u / half_width))
            out[t] += amps[j] * s * win
