"""Complex ideal ratio masks and the speech-quality-aware weight maps."""

import numpy as np

CIRM_EPS = 1e-8
MASK_CLIP = 20.0


def _check_same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def true_cirm(S, Y, eps: float = CIRM_EPS, mask_clip: float | None = MASK_CLIP) -> np.ndarray:
    """Complex mask M with M * Y ~= S.

    Real and imaginary parts are formed explicitly with ``eps`` added to
    ``|Y|^2``; bins whose magnitude exceeds ``mask_clip`` are scaled back
    radially onto the clip circle. ``mask_clip=None`` disables clipping.
    """
    _check_same_shape(S, Y)
    S = np.asarray(S)
    Y = np.asarray(Y)
    denom = Y.real**2 + Y.imag**2 + eps
    m_r = (S.real * Y.real + S.imag * Y.imag) / denom
    m_i = (S.imag * Y.real - S.real * Y.imag) / denom
    M = m_r + 1j * m_i
    if mask_clip is not None:
        mag = np.abs(M)
        over = mag > mask_clip
        if np.any(over):
            M[over] *= mask_clip / mag[over]
    return M


def apply_mask(M, Y) -> np.ndarray:
    _check_same_shape(M, Y)
    return np.asarray(M) * np.asarray(Y)


def error_spectrum(Y, S) -> np.ndarray:
    _check_same_shape(Y, S)
    return np.asarray(Y) - np.asarray(S)


def mask_modulus(M) -> np.ndarray:
    # hypot: correctly rounded, so a unit-modulus bin reads exactly 1
    return np.abs(np.asarray(M))


def sdw_weights(M_true, n: float = 2.0, bound: float = 10.0) -> np.ndarray:
    """Speech-distortion weights: ``min(max(1, |M|)**n, bound)``; 1 where |M| <= 1."""
    if not n > 1 or not bound > 1:
        raise ValueError(f"SDW needs n > 1 and bound > 1, got n={n}, bound={bound}")
    with np.errstate(over="ignore"):  # inf is clipped to bound
        return np.minimum(np.maximum(1.0, mask_modulus(M_true)) ** n, bound)


def esw_weights(M_true, n: float = -1.0, bound: float = 10.0) -> np.ndarray:
    """Echo-suppression weights: ``min(min(1, |M|)**n, bound)``; 1 where |M| >= 1.

    A zero-magnitude bin would be +inf before clipping and is set to ``bound``.
    """
    if not n < 0 or not bound > 1:
        raise ValueError(f"ESW needs n < 0 and bound > 1, got n={n}, bound={bound}")
    mag = np.minimum(1.0, mask_modulus(M_true))
    out = np.full(mag.shape, float(bound))
    nz = mag > 0
    with np.errstate(over="ignore"):  # inf is clipped to bound
        out[nz] = np.minimum(mag[nz] ** n, bound)
    return out
