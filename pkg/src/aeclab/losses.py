"""Training objectives.

Every loss reduces by the mean over bins (and batch). Functions that the
trainer differentiates accept ``with_grad=True`` and then return
``(value, grad)``; for complex masks ``grad`` is ``dL/dRe + 1j * dL/dIm``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .masks import _check_same_shape, esw_weights, mask_modulus, sdw_weights


@dataclass
class LossBreakdown:
    mask_mse: float = 0.0
    sdw_loss: float = 0.0
    esw_loss: float = 0.0
    error_loss: float = 0.0
    contrastive: float = 0.0
    total: float = 0.0
    alpha: float = 0.0
    lambda_err: float = 0.0

    def log_line(self, **extra) -> str:
        fields = dict(extra)
        fields.update(asdict(self))
        return " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class FinetuneConfig:
    sdw_n: float = 2.0
    sdw_bound: float = 10.0
    esw_n: float = -1.0
    esw_bound: float = 10.0
    lambda_err: float = 0.1
    error_mode: str = "product"


def mask_mse(M_true, M_est, with_grad: bool = False):
    _check_same_shape(M_true, M_est)
    diff = np.asarray(M_est) - np.asarray(M_true)
    sq = diff.real**2 + diff.imag**2
    value = float(np.mean(sq))
    if not with_grad:
        return value
    return value, 2.0 * diff / sq.size


def weighted_mask_loss(M_true, M_est, W, with_grad: bool = False):
    _check_same_shape(M_true, M_est)
    _check_same_shape(M_true, W)
    diff = np.asarray(M_est) - np.asarray(M_true)
    sq = diff.real**2 + diff.imag**2
    value = float(np.mean(np.asarray(W) * sq))
    if not with_grad:
        return value
    return value, 2.0 * np.asarray(W) * diff / sq.size


def error_reduction_loss(M_est, E, mode: str = "product", with_grad: bool = False):
    """Residual-error objective tying the estimated mask to ``E = Y - S``.

    ``product``: mean of ``(|M| * |E|)**2``. ``difference``: mean of
    ``(|M| - |E|)**2``.
    """
    _check_same_shape(M_est, E)
    M_est = np.asarray(M_est)
    m_abs = mask_modulus(M_est)
    e_abs = np.abs(np.asarray(E))
    if mode == "product":
        value = float(np.mean((m_abs * e_abs) ** 2))
        grad = 2.0 * M_est * e_abs**2 / m_abs.size
    elif mode == "difference":
        resid = m_abs - e_abs
        value = float(np.mean(resid**2))
        unit = np.zeros_like(M_est)
        nz = m_abs > 0
        unit[nz] = M_est[nz] / m_abs[nz]
        grad = 2.0 * resid * unit / m_abs.size
    else:
        raise ValueError(f"unknown error-reduction mode {mode!r}")
    if not with_grad:
        return value
    return value, grad


def contrastive_loss(pos_scores, neg_scores, with_grad: bool = False):
    """Softmax contrastive loss averaged over positives and frames.

    ``pos_scores`` is ``(P, T)`` and ``neg_scores`` ``(N, T)``; a 1-D input
    is taken as a single frame. For each positive p and frame t the term is
    ``-s_pt + log(exp(s_pt) + sum_n exp(s_nt))``.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[:, None]
    if neg.ndim == 1:
        neg = neg[:, None]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("contrastive loss needs at least one positive and one negative score")
    if pos.shape[1] != neg.shape[1]:
        raise ValueError("positive and negative scores cover different frame counts")
    n_pos, n_frames = pos.shape
    # logits[p, :, t] = [s_pt, s_1t, ..., s_Nt]
    logits = np.concatenate(
        [pos[:, None, :], np.broadcast_to(neg[None], (n_pos,) + neg.shape)], axis=1
    )
    peak = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - peak)
    denom = ex.sum(axis=1, keepdims=True)
    terms = -(logits[:, 0, :] - peak[:, 0, :]) + np.log(denom[:, 0, :])
    count = n_pos * n_frames
    value = float(terms.sum() / count)
    if not with_grad:
        return value
    soft = ex / denom
    d_logits = soft.copy()
    d_logits[:, 0, :] -= 1.0
    d_logits /= count
    d_pos = d_logits[:, 0, :]
    d_neg = d_logits[:, 1:, :].sum(axis=0)
    return value, d_pos.reshape(np.shape(pos_scores)), d_neg.reshape(np.shape(neg_scores))


def total_loss(aec: float, con: float, alpha: float) -> float:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return aec + alpha * con


def finetune_objective(M_true, M_est, E, cfg: FinetuneConfig = FinetuneConfig(), with_grad: bool = False):
    """SQA-weighted mask loss plus ``lambda_err`` times the error-reduction loss."""
    w_sdw = sdw_weights(M_true, cfg.sdw_n, cfg.sdw_bound)
    w_esw = esw_weights(M_true, cfg.esw_n, cfg.esw_bound)
    weighted, g_w = weighted_mask_loss(M_true, M_est, w_sdw * w_esw, with_grad=True)
    err, g_e = error_reduction_loss(M_est, E, cfg.error_mode, with_grad=True)
    out = LossBreakdown(
        mask_mse=mask_mse(M_true, M_est),
        sdw_loss=weighted_mask_loss(M_true, M_est, w_sdw),
        esw_loss=weighted_mask_loss(M_true, M_est, w_esw),
        error_loss=err,
        contrastive=0.0,
        total=weighted + cfg.lambda_err * err,
        alpha=0.0,
        lambda_err=cfg.lambda_err,
    )
    if not with_grad:
        return out
    return out, g_w + cfg.lambda_err * g_e
