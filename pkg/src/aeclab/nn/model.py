"""Three-stage complex-mask echo canceller: feature extraction (FEN), acoustic
separation (ASN) and mask optimization (MON), plus the contrastive score head.

Feature packing per frame is ``[mic_re, mic_im, far_re, far_im]`` over the
``n_bins`` STFT bins, i.e. ``2 * n_bins`` complex features stored as
``4 * n_bins`` reals. Masks are packed as ``[re, im]``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..masks import apply_mask
from .layers import GRU, CausalConv1D, Dense, ScoreHead

PACKING_ORDER = "mic_re,mic_im,far_re,far_im"


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 513
    conv_filters: int = 128
    conv_kernel: int = 3
    gru_units: int = 512
    score_dim: int = 64
    score_stride: int = 4
    seed: int = 0

    @property
    def feature_width(self) -> int:
        return 4 * self.n_bins

    @property
    def mask_width(self) -> int:
        return 2 * self.n_bins

    def to_dict(self):
        return asdict(self)


def pack_features(mic, far) -> np.ndarray:
    return np.concatenate([mic.real, mic.imag, far.real, far.imag], axis=-1)


def unpack_mask(packed) -> np.ndarray:
    F = packed.shape[-1] // 2
    return packed[..., :F] + 1j * packed[..., F:]


def pack_mask(mask) -> np.ndarray:
    return np.concatenate([mask.real, mask.imag], axis=-1)


class AecModel:
    LAYER_ORDER = (
        "fen_conv", "fen_gru", "fen_proj",
        "asn_gru1", "asn_gru2", "asn_proj",
        "mon_conv", "mon_gru", "mon_proj",
        "score",
    )

    def __init__(self, cfg: ModelConfig = ModelConfig(), dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        Fw, Mw = cfg.feature_width, cfg.mask_width
        C, K, H = cfg.conv_filters, cfg.conv_kernel, cfg.gru_units
        self.layers = {
            "fen_conv": CausalConv1D(Fw, C, K, rng, dtype),
            "fen_gru": GRU(C, H, rng, dtype),
            "fen_proj": Dense(H, Fw, zero=True, dtype=dtype),
            "asn_gru1": GRU(Fw, H, rng, dtype),
            "asn_gru2": GRU(H, H, rng, dtype),
            "asn_proj": Dense(H, Mw, rng, dtype=dtype),
            "mon_conv": CausalConv1D(Mw + Mw, C, K, rng, dtype),
            "mon_gru": GRU(C, H, rng, dtype),
            "mon_proj": Dense(H, Mw, zero=True, dtype=dtype),
            "score": ScoreHead(Fw, cfg.score_dim, cfg.score_stride, rng, dtype),
        }
        self.dtype = np.dtype(dtype)

    # -- parameters --------------------------------------------------------

    def named_params(self):
        for lname in self.LAYER_ORDER:
            layer = self.layers[lname]
            for pname in layer.params:
                yield f"{lname}.{pname}", layer.params[pname]

    def named_grads(self):
        for lname in self.LAYER_ORDER:
            layer = self.layers[lname]
            for pname in layer.grads:
                yield f"{lname}.{pname}", layer.grads[pname]

    def params(self) -> dict:
        return dict(self.named_params())

    def grads(self) -> dict:
        return dict(self.named_grads())

    def set_param(self, name, value):
        lname, pname = name.split(".")
        layer = self.layers[lname]
        if layer.params[pname].shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape}, expected {layer.params[pname].shape}")
        layer.params[pname] = np.asarray(value, dtype=self.dtype).copy()

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def astype(self, dtype):
        """Copy of the model with every parameter cast to ``dtype``."""
        out = AecModel.__new__(AecModel)
        out.cfg = self.cfg
        out.dtype = np.dtype(dtype)
        out.layers = {}
        for lname, layer in self.layers.items():
            clone = layer.__class__.__new__(layer.__class__)
            clone.__dict__.update(layer.__dict__)
            clone.params = {k: v.copy() for k, v in layer.params.items()}
            out.layers[lname] = clone.astype(dtype)
        return out

    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    # -- stages ------------------------------------------------------------

    def _cgru(self, x, conv, gru, proj):
        c, c_cache = conv.forward(x)
        (g, _), g_cache = gru.forward(c)
        p, p_cache = proj.forward(g)
        return p, (c_cache, g_cache, p_cache)

    def _cgru_backward(self, dp, cache, conv, gru, proj):
        c_cache, g_cache, p_cache = cache
        dg = proj.backward(dp, p_cache)
        dc, _ = gru.backward(dg, g_cache)
        return conv.backward(dc, c_cache)

    def fen_forward(self, x):
        """Two passes of one shared CGRU block; the first pass is residual."""
        if x.shape[-1] != self.cfg.feature_width:
            raise ValueError(f"FEN expects width {self.cfg.feature_width}, got {x.shape[-1]}")
        L = self.layers
        p1, cache1 = self._cgru(x, L["fen_conv"], L["fen_gru"], L["fen_proj"])
        f1 = x + p1
        f2, cache2 = self._cgru(f1, L["fen_conv"], L["fen_gru"], L["fen_proj"])
        return f2, (cache1, cache2)

    def fen_backward(self, df2, cache):
        L = self.layers
        cache1, cache2 = cache
        df1 = self._cgru_backward(df2, cache2, L["fen_conv"], L["fen_gru"], L["fen_proj"])
        dx = df1 + self._cgru_backward(df1, cache1, L["fen_conv"], L["fen_gru"], L["fen_proj"])
        return dx

    def asn_forward(self, feats):
        if feats.shape[-1] != self.cfg.feature_width:
            raise ValueError(f"ASN expects width {self.cfg.feature_width}, got {feats.shape[-1]}")
        L = self.layers
        (a1, _), c1 = L["asn_gru1"].forward(feats)
        (a2, _), c2 = L["asn_gru2"].forward(a1)
        coarse, c3 = L["asn_proj"].forward(a2)
        return coarse, (c1, c2, c3)

    def asn_backward(self, d_coarse, cache):
        L = self.layers
        c1, c2, c3 = cache
        da2 = L["asn_proj"].backward(d_coarse, c3)
        da1, _ = L["asn_gru2"].backward(da2, c2)
        dfeats, _ = L["asn_gru1"].backward(da1, c1)
        return dfeats

    def mon_forward(self, coarse, mic_packed):
        """Residual refinement of the coarse mask from ``[coarse, mic_re, mic_im]``."""
        if coarse.shape != mic_packed.shape or coarse.shape[-1] != self.cfg.mask_width:
            raise ValueError(f"MON shape mismatch: {coarse.shape} vs {mic_packed.shape}")
        L = self.layers
        x = np.concatenate([coarse, mic_packed], axis=-1)
        corr, cache = self._cgru(x, L["mon_conv"], L["mon_gru"], L["mon_proj"])
        return coarse + corr, cache

    def mon_backward(self, d_refined, cache):
        L = self.layers
        dx = self._cgru_backward(d_refined, cache, L["mon_conv"], L["mon_gru"], L["mon_proj"])
        return d_refined + dx[..., : self.cfg.mask_width]

    # -- whole model ---------------------------------------------------------

    def _as_batch(self, spec):
        spec = np.asarray(spec)
        if spec.ndim == 2:
            spec = spec[None]
        if spec.ndim != 3 or spec.shape[-1] != self.cfg.n_bins:
            raise ValueError(f"expected (batch, frames, {self.cfg.n_bins}) spectra, got {spec.shape}")
        return spec

    def forward(self, mic, far):
        """Returns ``(mask, est_near, features, cache)``.

        ``mask`` and ``est_near`` are complex ``(batch, T, n_bins)``;
        ``features`` is the FEN output used for contrastive scoring.
        """
        squeeze = np.ndim(mic) == 2
        mic = self._as_batch(mic)
        far = self._as_batch(far)
        if mic.shape != far.shape:
            raise ValueError(f"mic {mic.shape} and far-end {far.shape} spectra differ in shape")
        x = pack_features(mic, far).astype(self.dtype)
        feats, fen_c = self.fen_forward(x)
        coarse, asn_c = self.asn_forward(feats)
        mic_packed = x[..., : self.cfg.mask_width]
        refined, mon_c = self.mon_forward(coarse, mic_packed)
        mask = unpack_mask(refined)
        est = apply_mask(mask, mic)
        cache = (fen_c, asn_c, mon_c)
        if squeeze:
            return mask[0], est[0], feats[0], cache
        return mask, est, feats, cache

    def backward(self, d_mask, cache, d_features=None):
        """Backpropagate a complex mask gradient (and optionally a feature gradient)."""
        fen_c, asn_c, mon_c = cache
        if d_mask.ndim == 2:
            d_mask = d_mask[None]
        d_refined = pack_mask(d_mask).astype(self.dtype)
        d_coarse = self.mon_backward(d_refined, mon_c)
        d_feats = self.asn_backward(d_coarse, asn_c)
        if d_features is not None:
            d_feats = d_feats + d_features.reshape(d_feats.shape)
        return self.fen_backward(d_feats, fen_c)

    def features(self, mic, far):
        """FEN output only (what the contrastive branch needs)."""
        mic = self._as_batch(mic)
        far = self._as_batch(far)
        x = pack_features(mic, far).astype(self.dtype)
        return self.fen_forward(x)

    def __call__(self, mic, far):
        mask, est, _, _ = self.forward(mic, far)
        return mask, est
