"""Trainable layers with explicit backward passes.

Layers are used functionally: ``forward`` returns ``(output, cache)`` and
``backward(d_out, cache)`` returns the input gradient while accumulating
parameter gradients into ``self.grads``. Keeping the cache outside the
layer is what lets one layer be applied twice with shared weights.
Sequences are ``(batch, time, features)``.
"""

import numpy as np
from scipy.special import expit


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self._init_grads()
        return self


def _uniform(rng, shape, fan_in, dtype):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def _orthogonal(rng, n, dtype):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.sign(np.diag(r))).astype(dtype)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, zero=False, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            W = np.zeros((n_in, n_out), dtype)
        else:
            W = _uniform(rng, (n_in, n_out), n_in, dtype)
        self.params = {"W": W, "b": np.zeros(n_out, dtype)}
        self._init_grads()

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Dense expects {self.n_in} input features, got {x.shape[-1]}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dy, x):
        self.grads["W"] += x.reshape(-1, self.n_in).T @ dy.reshape(-1, self.n_out)
        self.grads["b"] += dy.reshape(-1, self.n_out).sum(axis=0)
        return dy @ self.params["W"].T


class CausalConv1D(Layer):
    """Temporal convolution; output frame t sees input frames t-K+1 .. t."""

    def __init__(self, n_in, n_out, kernel=3, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out, self.kernel = n_in, n_out, kernel
        if rng is None:
            W = np.zeros((kernel, n_in, n_out), dtype)
        else:
            W = _uniform(rng, (kernel, n_in, n_out), kernel * n_in, dtype)
        self.params = {"W": W, "b": np.zeros(n_out, dtype)}
        self._init_grads()

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Conv1D expects {self.n_in} channels, got {x.shape[-1]}")
        K, T = self.kernel, x.shape[1]
        W = self.params["W"]
        xp = np.pad(x, ((0, 0), (K - 1, 0), (0, 0)))
        y = xp[:, 0:T] @ W[0]
        for k in range(1, K):
            y = y + xp[:, k : k + T] @ W[k]
        return y + self.params["b"], xp

    def backward(self, dy, xp):
        K, T = self.kernel, dy.shape[1]
        W = self.params["W"]
        dy2 = dy.reshape(-1, self.n_out)
        dxp = np.zeros_like(xp)
        for k in range(K):
            self.grads["W"][k] += xp[:, k : k + T].reshape(-1, self.n_in).T @ dy2
            dxp[:, k : k + T] += dy @ W[k].T
        self.grads["b"] += dy2.sum(axis=0)
        return dxp[:, K - 1 :]

    def init_buffer(self, batch, dtype):
        return np.zeros((batch, self.kernel - 1, self.n_in), dtype)

    def step(self, x_t, buf):
        """One frame ``(batch, n_in)`` with history ``buf``; returns ``(y_t, new_buf)``."""
        K = self.kernel
        W = self.params["W"]
        hist = np.concatenate([buf, x_t[:, None, :]], axis=1)
        y = hist[:, 0:1] @ W[0]
        for k in range(1, K):
            y = y + hist[:, k : k + 1] @ W[k]
        return (y + self.params["b"])[:, 0], hist[:, 1:]


class GRU(Layer):
    """Gated recurrent unit with gates ordered (update z, reset r, candidate n).

    h' = (1 - z) * n + z * h, with n = tanh(x W_n + (r * h) U_n + b_n).
    """

    def __init__(self, n_in, hidden, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        H = hidden
        if rng is None:
            W = np.zeros((n_in, 3 * H), dtype)
            U = np.zeros((H, 3 * H), dtype)
        else:
            W = _uniform(rng, (n_in, 3 * H), n_in, dtype)
            U = np.concatenate([_orthogonal(rng, H, dtype) for _ in range(3)], axis=1)
        self.params = {"W": W, "U": U, "b": np.zeros(3 * H, dtype)}
        self._init_grads()

    def init_state(self, batch, dtype):
        return np.zeros((batch, self.hidden), dtype)

    def forward(self, x, h0=None):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"GRU expects {self.n_in} input features, got {x.shape[-1]}")
        B, T, _ = x.shape
        H = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        if h0 is None:
            h0 = self.init_state(B, x.dtype)
        if h0.shape != (B, H):
            raise ValueError(f"initial state shape {h0.shape}, expected {(B, H)}")
        xw = x @ W + b
        U_zr, U_n = U[:, : 2 * H], U[:, 2 * H :]
        out = np.empty((B, T, H), dtype=xw.dtype)
        gates = np.empty((B, T, 3 * H), dtype=xw.dtype)
        rh_all = np.empty((B, T, H), dtype=xw.dtype)
        h = h0
        for t in range(T):
            zr = expit(xw[:, t, : 2 * H] + h @ U_zr)
            z, r = zr[:, :H], zr[:, H:]
            rh = r * h
            n = np.tanh(xw[:, t, 2 * H :] + rh @ U_n)
            h = (1.0 - z) * n + z * h
            out[:, t] = h
            gates[:, t, : 2 * H] = zr
            gates[:, t, 2 * H :] = n
            rh_all[:, t] = rh
        return (out, h), (x, h0, out, gates, rh_all)

    def backward(self, d_out, cache, dh_last=None):
        """Backpropagation through time; returns ``(dx, dh0)``."""
        x, h0, out, gates, rh_all = cache
        B, T, H = out.shape
        U = self.params["U"]
        U_zr_T, U_n_T = U[:, : 2 * H].T, U[:, 2 * H :].T
        h_prev_all = np.concatenate([h0[:, None], out[:, :-1]], axis=1)
        d_pre = np.empty((B, T, 3 * H), dtype=out.dtype)
        dh = np.zeros((B, H), out.dtype) if dh_last is None else dh_last.astype(out.dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + d_out[:, t]
            z = gates[:, t, :H]
            r = gates[:, t, H : 2 * H]
            n = gates[:, t, 2 * H :]
            h_prev = h_prev_all[:, t]
            dn_pre = dh * (1.0 - z) * (1.0 - n * n)
            dz_pre = dh * (h_prev - n) * z * (1.0 - z)
            d_rh = dn_pre @ U_n_T
            dr_pre = d_rh * h_prev * r * (1.0 - r)
            d_pre[:, t, :H] = dz_pre
            d_pre[:, t, H : 2 * H] = dr_pre
            d_pre[:, t, 2 * H :] = dn_pre
            dh = dh * z + d_rh * r + d_pre[:, t, : 2 * H] @ U_zr_T
        flat = d_pre.reshape(-1, 3 * H)
        self.grads["W"] += x.reshape(-1, self.n_in).T @ flat
        self.grads["b"] += flat.sum(axis=0)
        self.grads["U"][:, : 2 * H] += h_prev_all.reshape(-1, H).T @ flat[:, : 2 * H]
        self.grads["U"][:, 2 * H :] += rh_all.reshape(-1, H).T @ flat[:, 2 * H :]
        dx = d_pre @ self.params["W"].T
        return dx, dh

    def step(self, x_t, h):
        H = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        xw = x_t[:, None, :] @ W + b
        xw = xw[:, 0]
        zr = expit(xw[:, : 2 * H] + h @ U[:, : 2 * H])
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(xw[:, 2 * H :] + (r * h) @ U[:, 2 * H :])
        return (1.0 - z) * n + z * h


class ScoreHead(Layer):
    """Strided-convolution downsampling followed by a bilinear similarity.

    ``downsample`` maps ``(batch, T, C)`` to ``(batch, ceil(T / stride), D)``
    (zero padding the tail); ``scores`` gives ``s[m, t] = a_t^T B o_{m,t}``.
    """

    def __init__(self, n_in, dim, stride=4, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.dim, self.stride = n_in, dim, stride
        if rng is None:
            W = np.zeros((stride * n_in, dim), dtype)
            Bm = np.zeros((dim, dim), dtype)
        else:
            W = _uniform(rng, (stride * n_in, dim), stride * n_in, dtype)
            Bm = _uniform(rng, (dim, dim), dim, dtype)
        self.params = {"W": W, "b": np.zeros(dim, dtype), "B": Bm}
        self._init_grads()

    def n_out_frames(self, T):
        return -(-T // self.stride)

    def downsample(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"score head expects {self.n_in} features, got {x.shape[-1]}")
        Bsz, T, C = x.shape
        T2 = self.n_out_frames(T)
        xp = np.pad(x, ((0, 0), (0, T2 * self.stride - T), (0, 0)))
        cols = xp.reshape(Bsz, T2, self.stride * C)
        return cols @ self.params["W"] + self.params["b"], (cols, T)

    def downsample_backward(self, dy, cache):
        cols, T = cache
        Bsz, T2, _ = cols.shape
        self.grads["W"] += cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, self.dim)
        self.grads["b"] += dy.reshape(-1, self.dim).sum(axis=0)
        dcols = dy @ self.params["W"].T
        return dcols.reshape(Bsz, T2 * self.stride, self.n_in)[:, :T]

    def scores(self, a, o):
        """``a``: (T2, D) anchor, ``o``: (M, T2, D) others -> (M, T2) scores."""
        aB = a @ self.params["B"]
        return np.einsum("td,mtd->mt", aB, o), (a, o, aB)

    def scores_backward(self, ds, cache):
        a, o, aB = cache
        do = ds[:, :, None] * aB[None]
        d_aB = np.einsum("mt,mtd->td", ds, o)
        self.grads["B"] += a.T @ d_aB
        da = d_aB @ self.params["B"].T
        return da, do
