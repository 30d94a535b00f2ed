"""Batched GRU layer with explicit backpropagation through time.

Update equations (reset gate applied to the previous state inside the
candidate)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from ahe_slsh.errors import ConfigError

TENSOR_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def sigmoid(a):
    return expit(a)


@dataclass
class GruParams:
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        H, D = self.W_z.shape
        for name in TENSOR_NAMES:
            arr = getattr(self, name)
            want = {"W": (H, D), "U": (H, H), "b": (H,)}[name[0]]
            if arr.shape != want:
                raise ConfigError(f"GRU tensor {name} has shape {arr.shape}, expected {want}")

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "GruParams":
        H, D = hidden_size, input_size
        return cls(**{n: np.zeros({"W": (H, D), "U": (H, H), "b": (H,)}[n[0]]) for n in TENSOR_NAMES})

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruParams":
        """Scaled-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        H, D = hidden_size, input_size
        out = {}
        for n in TENSOR_NAMES:
            if n[0] == "b":
                out[n] = np.zeros(H)
            else:
                cols = D if n[0] == "W" else H
                lim = np.sqrt(6.0 / (cols + H))
                out[n] = rng.uniform(-lim, lim, size=(H, cols))
        return cls(**out)


def gru_step(params: GruParams, x_t, h_prev):
    """Single GRU update for one vector (or a batch of row vectors)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise ConfigError(f"gru_step: x has {x_t.shape[-1]} features (want {params.input_size}), "
                          f"h has {h_prev.shape[-1]} (want {params.hidden_size})")
    p = params
    z = sigmoid(x_t @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x_t @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    hc = np.tanh(x_t @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * hc


class GruTape:
    """Records GRU steps over a batch so they can be differentiated later.

    ``x`` inputs may be supplied per step (autoregressive decoding) or
    precomputed for a whole sequence via :meth:`run`.
    """

    def __init__(self, params: GruParams):
        self.p = params
        H = params.hidden_size
        self.H = H
        # z and r share one recurrent matmul
        self.U_zr = np.concatenate([params.U_z, params.U_r])
        self.xs = []
        self.h_prev = []
        self.z = []
        self.r = []
        self.hc = []

    def step(self, x, h, xw=None):
        p, H = self.p, self.H
        if xw is None:
            xw = (x @ p.W_z.T + p.b_z, x @ p.W_r.T + p.b_r, x @ p.W_h.T + p.b_h)
        zr = h @ self.U_zr.T
        z = expit(zr[:, :H] + xw[0])
        r = expit(zr[:, H:] + xw[1])
        hc = np.tanh(xw[2] + (r * h) @ p.U_h.T)
        self.xs.append(x)
        self.h_prev.append(h)
        self.z.append(z)
        self.r.append(r)
        self.hc.append(hc)
        return h + z * (hc - h)

    def run(self, X, h0):
        """Forward over X of shape (B, T, D); returns hidden states (B, T, H)."""
        p = self.p
        xz = X @ p.W_z.T + p.b_z
        xr = X @ p.W_r.T + p.b_r
        xh = X @ p.W_h.T + p.b_h
        h = h0
        out = np.empty(X.shape[:2] + (p.hidden_size,))
        for t in range(X.shape[1]):
            h = self.step(X[:, t], h, (xz[:, t], xr[:, t], xh[:, t]))
            out[:, t] = h
        return out

    def backward(self, dH_seq=None, dh_last=None, step_hook=None):
        """Backpropagate through every recorded step, newest first.

        ``dH_seq[:, t]`` is the external gradient on the state produced at
        step ``t``; ``dh_last`` an extra gradient on the final state.
        ``step_hook(t, dx_t)`` may return an additional gradient for the
        state produced at step ``t - 1`` (used when each input depends on
        the previous state).  Returns ``(dX, dh0, grads)``.
        """
        p, H = self.p, self.H
        n = len(self.xs)
        B = self.h_prev[0].shape[0]
        a_zr = np.empty((n, B, 2 * H))
        a_hs = np.empty((n, B, H))
        dX = np.empty((n, B, p.input_size)) if step_hook is not None else None
        W_zrh = np.concatenate([p.W_z, p.W_r, p.W_h]) if step_hook is not None else None
        dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
        extra = None
        for t in range(n - 1, -1, -1):
            if dH_seq is not None:
                dh = dh + dH_seq[:, t]
            if extra is not None:
                dh = dh + extra
            h_prev, z, r, hc = self.h_prev[t], self.z[t], self.r[t], self.hc[t]
            dz = dh * z
            a_h = dz * (1.0 - hc * hc)
            a_z = dh * (hc - h_prev) * z * (1.0 - z)
            a_hs[t] = a_h
            a_zr[t, :, :H] = a_z
            dhr = a_h @ p.U_h
            a_zr[t, :, H:] = dhr * h_prev * r * (1.0 - r)
            dh = dh - dz + dhr * r + a_zr[t] @ self.U_zr
            if step_hook is not None:
                dX[t] = np.concatenate([a_zr[t], a_h], axis=1) @ W_zrh
                extra = step_hook(t, dX[t])
        xs = np.stack(self.xs)
        hp = np.stack(self.h_prev)
        rh = np.stack(self.r) * hp
        a_z, a_r = a_zr[..., :H], a_zr[..., H:]
        grads = GruParams(
            W_z=np.tensordot(a_z, xs, axes=([0, 1], [0, 1])), U_z=np.tensordot(a_z, hp, axes=([0, 1], [0, 1])),
            b_z=a_z.sum(axis=(0, 1)),
            W_r=np.tensordot(a_r, xs, axes=([0, 1], [0, 1])), U_r=np.tensordot(a_r, hp, axes=([0, 1], [0, 1])),
            b_r=a_r.sum(axis=(0, 1)),
            W_h=np.tensordot(a_hs, xs, axes=([0, 1], [0, 1])), U_h=np.tensordot(a_hs, rh, axes=([0, 1], [0, 1])),
            b_h=a_hs.sum(axis=(0, 1)),
        )
        if dX is None:
            dX = a_z @ p.W_z + a_r @ p.W_r + a_hs @ p.W_h
        return dX.transpose(1, 0, 2), dh, grads
