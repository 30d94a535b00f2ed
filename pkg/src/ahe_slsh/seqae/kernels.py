"""Compiled inner loops for the GRU encoder and the feedback decoder.

Only the time recurrences live here; input projections and weight
gradients are single numpy contractions done by the callers.  The pure
numpy tape in :mod:`ahe_slsh.seqae.gru` is the reference implementation
and the two are checked against each other in the tests.

Set ``AHE_SLSH_PURE_NUMPY=1`` (or ``kernels.ENABLED = False``) to fall back
to the reference path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENABLED = numba is not None and os.environ.get("AHE_SLSH_PURE_NUMPY", "") not in ("1", "true")

# above this many multiply-adds per recurrent step BLAS-backed numpy wins
MAX_STEP_WORK = 8192


def use_kernels(rows: int, hidden: int) -> bool:
    return ENABLED and rows * hidden * hidden <= MAX_STEP_WORK


if numba is not None:
    _jit = numba.njit(cache=True, fastmath=False, nogil=True)
else:  # pragma: no cover
    def _jit(f):
        return f


@_jit
def _sigm(a):
    return 1.0 / (1.0 + np.exp(-a))


@_jit
def _cell(h, xw, Uzr, Uh, z, r, hc, hn):
    """One GRU update of a (B, H) state given input terms xw (B, 3H); writes z, r, hc, hn."""
    B, H = h.shape
    rh = np.empty(H)
    for b in range(B):
        for j in range(H):
            az = xw[b, j]
            ar = xw[b, H + j]
            for i in range(H):
                az += Uzr[j, i] * h[b, i]
                ar += Uzr[H + j, i] * h[b, i]
            z[b, j] = _sigm(az)
            r[b, j] = _sigm(ar)
        for i in range(H):
            rh[i] = r[b, i] * h[b, i]
        for j in range(H):
            ah = xw[b, 2 * H + j]
            for i in range(H):
                ah += Uh[j, i] * rh[i]
            hc[b, j] = np.tanh(ah)
            hn[b, j] = h[b, j] + z[b, j] * (hc[b, j] - h[b, j])


@_jit
def _cell_back(dh, hp, z, r, hc, Uzr, Uh, A, dprev):
    """Gradients through one update: writes pre-activation grads A (B, 3H) and dprev."""
    B, H = dh.shape
    dhr = np.empty(H)
    for b in range(B):
        for j in range(H):
            g = dh[b, j]
            A[b, j] = g * (hc[b, j] - hp[b, j]) * z[b, j] * (1.0 - z[b, j])
            A[b, 2 * H + j] = g * z[b, j] * (1.0 - hc[b, j] * hc[b, j])
        for i in range(H):
            acc = 0.0
            for j in range(H):
                acc += A[b, 2 * H + j] * Uh[j, i]
            dhr[i] = acc
        for i in range(H):
            A[b, H + i] = dhr[i] * hp[b, i] * r[b, i] * (1.0 - r[b, i])
        for i in range(H):
            acc = dh[b, i] * (1.0 - z[b, i]) + dhr[i] * r[b, i]
            for j in range(2 * H):
                acc += A[b, j] * Uzr[j, i]
            dprev[b, i] = acc


@_jit
def _seq_forward(XW, h0, Uzr, Uh):
    T, B, _ = XW.shape
    H = h0.shape[1]
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    HC = np.empty((T, B, H))
    Hs[0] = h0
    for t in range(T):
        _cell(Hs[t], XW[t], Uzr, Uh, Z[t], R[t], HC[t], Hs[t + 1])
    return Hs, Z, R, HC


@_jit
def _seq_backward(Hs, Z, R, HC, dHs, dh_last, Uzr, Uh):
    T, B, H = Z.shape
    A = np.empty((T, B, 3 * H))
    dh = dh_last.copy()
    nxt = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        dh += dHs[t]
        _cell_back(dh, Hs[t], Z[t], R[t], HC[t], Uzr, Uh, A[t], nxt)
        dh[:] = nxt
    return A, dh


@_jit
def _dec_forward(ctx, T, W, bias, Uzr, Uh, V, c):
    B, H = ctx.shape
    C = V.shape[0]
    D = W.shape[1]
    Y = np.zeros((T + 1, B, C))  # Y[k] is the input of step k; Y[k + 1] its output
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    HC = np.empty((T, B, H))
    xw = np.empty((B, 3 * H))
    Hs[0] = ctx
    for k in range(T):
        for b in range(B):
            for j in range(3 * H):
                acc = bias[j]
                for d in range(D):
                    acc += W[j, d] * Y[k, b, d]
                xw[b, j] = acc
        _cell(Hs[k], xw, Uzr, Uh, Z[k], R[k], HC[k], Hs[k + 1])
        for b in range(B):
            for d in range(C):
                acc = c[d]
                for i in range(H):
                    acc += V[d, i] * Hs[k + 1, b, i]
                Y[k + 1, b, d] = acc
    return Y, Hs, Z, R, HC


@_jit
def _dec_backward(dO, Hs, Z, R, HC, W, Uzr, Uh, V):
    T, B, H = Z.shape
    C = dO.shape[2]
    D = W.shape[1]
    A = np.empty((T, B, 3 * H))
    Gy = np.empty((T, B, C))
    dh = np.zeros((B, H))
    nxt = np.empty((B, H))
    dx = np.zeros((B, D))
    for k in range(T - 1, -1, -1):
        # output k feeds the input of step k + 1
        for b in range(B):
            for d in range(C):
                Gy[k, b, d] = dO[k, b, d] + dx[b, d]
            for i in range(H):
                acc = 0.0
                for d in range(C):
                    acc += Gy[k, b, d] * V[d, i]
                dh[b, i] += acc
        _cell_back(dh, Hs[k], Z[k], R[k], HC[k], Uzr, Uh, A[k], nxt)
        dh[:] = nxt
        for b in range(B):
            for d in range(D):
                acc = 0.0
                for j in range(3 * H):
                    acc += A[k, b, j] * W[j, d]
                dx[b, d] = acc
    return A, Gy, dh


# -- numpy-facing wrappers ---------------------------------------------------

def _fused(p):
    return (np.concatenate([p.W_z, p.W_r, p.W_h]), np.concatenate([p.b_z, p.b_r, p.b_h]),
            np.concatenate([p.U_z, p.U_r]), np.ascontiguousarray(p.U_h))


def _weight_grads(A, Xin, Hp, R, H):
    from ahe_slsh.seqae.gru import GruParams

    ax = ([0, 1], [0, 1])
    gW = np.tensordot(A, Xin, axes=ax)
    gU = np.tensordot(A[..., :2 * H], Hp, axes=ax)
    gUh = np.tensordot(A[..., 2 * H:], R * Hp, axes=ax)
    gb = A.sum(axis=(0, 1))
    return GruParams(W_z=gW[:H], U_z=gU[:H], b_z=gb[:H],
                     W_r=gW[H:2 * H], U_r=gU[H:], b_r=gb[H:2 * H],
                     W_h=gW[2 * H:], U_h=gUh, b_h=gb[2 * H:])


class FastTape:
    """Drop-in for :class:`GruTape` over whole sequences (no per-step hook)."""

    def __init__(self, params):
        self.p = params
        self.H = params.hidden_size
        self._f = _fused(params)

    def run(self, X, h0):
        W, b, Uzr, Uh = self._f
        Xt = np.ascontiguousarray(np.transpose(X, (1, 0, 2)))
        XW = Xt @ W.T + b
        Hs, Z, R, HC = _seq_forward(XW, np.ascontiguousarray(h0, dtype=np.float64), Uzr, Uh)
        self._cache = (Xt, Hs, Z, R, HC)
        return Hs[1:].transpose(1, 0, 2)

    def backward(self, dH_seq=None, dh_last=None, step_hook=None):
        if step_hook is not None:
            raise ValueError("FastTape does not support per-step hooks")
        W, b, Uzr, Uh = self._f
        Xt, Hs, Z, R, HC = self._cache
        T, B, H = Z.shape
        dHs = (np.zeros((T, B, H)) if dH_seq is None
               else np.ascontiguousarray(np.transpose(dH_seq, (1, 0, 2))))
        dl = np.zeros((B, H)) if dh_last is None else np.array(dh_last, dtype=np.float64)
        A, dh0 = _seq_backward(Hs, Z, R, HC, dHs, dl, Uzr, Uh)
        dX = (A @ W).transpose(1, 0, 2)
        return dX, dh0, _weight_grads(A, Xt, Hs[:-1], R, H)


def decoder_forward(p, V, c, ctx, T):
    """Outputs (B, T, C) in emission order plus a cache for :func:`decoder_backward`."""
    f = _fused(p)
    W, b, Uzr, Uh = f
    Y, Hs, Z, R, HC = _dec_forward(np.ascontiguousarray(ctx, dtype=np.float64), T,
                                   W, b, Uzr, Uh, np.ascontiguousarray(V), c)
    return Y[1:].transpose(1, 0, 2), (f, Y, Hs, Z, R, HC)


def decoder_backward(p, V, cache, dO):
    """``dO`` is the gradient on outputs in emission order, shape (B, T, C)."""
    (W, b, Uzr, Uh), Y, Hs, Z, R, HC = cache
    dOt = np.ascontiguousarray(np.transpose(dO, (1, 0, 2)))
    A, Gy, dctx = _dec_backward(dOt, Hs, Z, R, HC, W, Uzr, Uh, np.ascontiguousarray(V))
    ax = ([0, 1], [0, 1])
    dV = np.tensordot(Gy, Hs[1:], axes=ax)
    dc = Gy.sum(axis=(0, 1))
    return dctx, _weight_grads(A, Y[:-1], Hs[:-1], R, p.hidden_size), dV, dc
