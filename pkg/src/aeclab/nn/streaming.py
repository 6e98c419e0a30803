"""Frame-by-frame inference with persistent recurrent and overlap-add state."""

import time
from dataclasses import dataclass, field

import numpy as np

from ..dsp import DEFAULT_FRAME, FrameConfig, istft, stft
from .model import AecModel, pack_features, unpack_mask


@dataclass
class StreamingState:
    conv_buf: dict
    hidden: dict
    ola: np.ndarray
    norm: np.ndarray
    frames_seen: int = 0
    frame_times: list = field(default_factory=list)

    @classmethod
    def initial(cls, model: AecModel, cfg: FrameConfig = DEFAULT_FRAME):
        L = model.layers
        dt = model.dtype
        return cls(
            conv_buf={
                "fen1": L["fen_conv"].init_buffer(1, dt),
                "fen2": L["fen_conv"].init_buffer(1, dt),
                "mon": L["mon_conv"].init_buffer(1, dt),
            },
            hidden={
                name: L[layer].init_state(1, dt)
                for name, layer in [
                    ("fen1", "fen_gru"), ("fen2", "fen_gru"),
                    ("asn1", "asn_gru1"), ("asn2", "asn_gru2"), ("mon", "mon_gru"),
                ]
            },
            ola=np.zeros(cfg.frame_len),
            norm=np.zeros(cfg.frame_len),
        )

    def reset(self, model: AecModel, cfg: FrameConfig = DEFAULT_FRAME):
        fresh = StreamingState.initial(model, cfg)
        self.__dict__.update(fresh.__dict__)


def _frame_spectrum(frame, cfg):
    return np.fft.rfft(frame * cfg.analysis_window(), n=cfg.fft_size)


def _cgru_step(model, x, prefix, key, state):
    L = model.layers
    c, state.conv_buf[key] = L[f"{prefix}_conv"].step(x, state.conv_buf[key])
    h = L[f"{prefix}_gru"].step(c, state.hidden[key])
    state.hidden[key] = h
    p, _ = L[f"{prefix}_proj"].forward(h)
    return p


def streaming_infer(state, mic_frame, far_frame, model: AecModel, cfg: FrameConfig = DEFAULT_FRAME):
    """Consume one analysis frame of mic and far-end samples, emit one hop of output.

    Returns ``(hop_samples, state)``; ``state`` is updated in place.
    """
    if state is None or not isinstance(state, StreamingState):
        raise ValueError("streaming state is not initialized; use StreamingState.initial(model)")
    mic_frame = np.asarray(mic_frame, dtype=np.float64)
    far_frame = np.asarray(far_frame, dtype=np.float64)
    if mic_frame.shape != (cfg.frame_len,) or far_frame.shape != (cfg.frame_len,):
        raise ValueError(f"frames must have {cfg.frame_len} samples")
    t0 = time.perf_counter()
    M = _frame_spectrum(mic_frame, cfg)[None]
    X = _frame_spectrum(far_frame, cfg)[None]
    x = pack_features(M, X).astype(model.dtype)
    mw = model.cfg.mask_width

    f1 = x + _cgru_step(model, x, "fen", "fen1", state)
    f2 = _cgru_step(model, f1, "fen", "fen2", state)
    L = model.layers
    state.hidden["asn1"] = L["asn_gru1"].step(f2, state.hidden["asn1"])
    state.hidden["asn2"] = L["asn_gru2"].step(state.hidden["asn1"], state.hidden["asn2"])
    coarse, _ = L["asn_proj"].forward(state.hidden["asn2"])
    mon_in = np.concatenate([coarse, x[:, :mw]], axis=-1)
    refined = coarse + _cgru_step(model, mon_in, "mon", "mon", state)

    est = unpack_mask(refined)[0] * M[0]
    frame = np.fft.irfft(est, n=cfg.fft_size)[: cfg.frame_len] * cfg.analysis_window()
    state.ola += frame
    state.norm += cfg.analysis_window() ** 2
    out = state.ola[: cfg.hop] / np.maximum(state.norm[: cfg.hop], 1e-10)
    state.ola = np.concatenate([state.ola[cfg.hop :], np.zeros(cfg.hop)])
    state.norm = np.concatenate([state.norm[cfg.hop :], np.zeros(cfg.hop)])
    state.frames_seen += 1
    state.frame_times.append(time.perf_counter() - t0)
    return out, state


def streaming_flush(state, cfg: FrameConfig = DEFAULT_FRAME):
    """Samples still pending in the overlap-add buffer after the last frame."""
    n = cfg.frame_len - cfg.hop
    return state.ola[:n] / np.maximum(state.norm[:n], 1e-10)


def stream_signal(model: AecModel, mic, far, cfg: FrameConfig = DEFAULT_FRAME):
    """Run :func:`streaming_infer` over whole signals.

    Returns ``(output, real_time_factor)``; the output covers the same samples
    as offline ``istft`` (every full frame plus the overlap-add tail).
    """
    mic = np.asarray(mic, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if mic.shape != far.shape:
        raise ValueError(f"mic ({mic.size}) and far-end ({far.size}) lengths differ")
    state = StreamingState.initial(model, cfg)
    n_frames = cfg.n_frames(mic.size)
    pieces = []
    for t in range(n_frames):
        s = t * cfg.hop
        out, state = streaming_infer(state, mic[s : s + cfg.frame_len], far[s : s + cfg.frame_len], model, cfg)
        pieces.append(out)
    pieces.append(streaming_flush(state, cfg))
    rtf = float(np.mean(state.frame_times)) / (cfg.hop / 16000.0)
    return np.concatenate(pieces), rtf


def offline_enhance(model: AecModel, mic, far, cfg: FrameConfig = DEFAULT_FRAME):
    """Whole-signal inference: STFT, one batched forward pass, ISTFT."""
    _, est, _, _ = model.forward(stft(mic, cfg), stft(far, cfg))
    return istft(est, cfg)
