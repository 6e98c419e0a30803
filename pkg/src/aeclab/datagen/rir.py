"""Image-source room impulse responses for a shoebox room (Allen & Berkley)."""

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .._backend import kernels

SPEED_OF_SOUND = 343.0
FRAC_DELAY_HALF_WIDTH = 40


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple
    source: tuple
    mic: tuple
    absorption: float = 0.3
    max_order: int = 8

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dims}")
        for name in ("source", "mic"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise ValueError(f"{name} position {tuple(p)} is not strictly inside the room")
        if not 0 < self.absorption <= 1:
            raise ValueError(f"absorption must be in (0, 1], got {self.absorption}")
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        if np.allclose(self.source, self.mic):
            raise ValueError("source and microphone coincide")

    @property
    def reflection(self) -> float:
        # pressure reflection coefficient for an energy absorption coefficient
        return float(np.sqrt(1.0 - self.absorption))

    def to_dict(self):
        d = asdict(self)
        d["dims"], d["source"], d["mic"] = list(self.dims), list(self.source), list(self.mic)
        return d


def image_sources(spec: RoomSpec):
    """Image positions and reflection counts with total order <= ``max_order``.

    Per axis an image is ``(1 - 2q) * s + 2 n L`` for q in {0, 1} and integer
    n; it has ``|n - q| + |n|`` wall hits on that axis.
    """
    K = spec.max_order
    src = np.asarray(spec.source, dtype=float)
    L = np.asarray(spec.dims, dtype=float)
    per_axis = []
    for a in range(3):
        opts = []
        for q in (0, 1):
            for n in range(-K, K + 1):
                hits = abs(n - q) + abs(n)
                if hits <= K:
                    opts.append(((1 - 2 * q) * src[a] + 2 * n * L[a], hits))
        per_axis.append(opts)
    positions, orders = [], []
    for (x, ox), (y, oy), (z, oz) in itertools.product(*per_axis):
        order = ox + oy + oz
        if order <= K:
            positions.append((x, y, z))
            orders.append(order)
    return np.array(positions), np.array(orders)


def generate_rir(spec: RoomSpec, fs: int = 16000, length: int | None = None) -> np.ndarray:
    """Sum of image-source pulses ``beta**order / (4 pi d)`` at fractional delay ``d / c``.

    Pulses are Hann-windowed sincs spanning 80 taps. ``length`` defaults to
    the latest arrival plus the pulse half width.
    """
    positions, orders = image_sources(spec)
    dist = np.linalg.norm(positions - np.asarray(spec.mic, dtype=float), axis=1)
    delays = dist / SPEED_OF_SOUND * fs
    amps = spec.reflection ** orders / (4.0 * np.pi * dist)
    if length is None:
        length = int(np.ceil(delays.max())) + FRAC_DELAY_HALF_WIDTH + 1
    keep = amps != 0.0
    out = np.zeros(length, dtype=np.float64)
    kernels.rir_accumulate(
        out,
        np.ascontiguousarray(delays[keep]),
        np.ascontiguousarray(amps[keep]),
        FRAC_DELAY_HALF_WIDTH,
    )
    return out


def random_room(rng, absorption_range=(0.2, 0.8), max_order: int = 8) -> RoomSpec:
    """Draw a plausible small room with loudspeaker and microphone inside."""
    dims = rng.uniform([3.0, 3.0, 2.4], [8.0, 7.0, 3.5])
    margin = 0.5
    src = rng.uniform(margin, dims - margin)
    mic = src + rng.uniform(-1.0, 1.0, size=3)
    mic = np.clip(mic, margin, dims - margin)
    if np.linalg.norm(mic - src) < 0.1:
        mic = np.clip(src + np.array([0.3, 0.0, 0.0]), margin, dims - margin)
    return RoomSpec(
        dims=tuple(float(v) for v in np.round(dims, 4)),
        source=tuple(float(v) for v in np.round(src, 4)),
        mic=tuple(float(v) for v in np.round(mic, 4)),
        absorption=float(np.round(rng.uniform(*absorption_range), 4)),
        max_order=max_order,
    )
