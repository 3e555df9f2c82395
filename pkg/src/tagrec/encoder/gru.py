"""Gated recurrent unit with hand-written backpropagation.

Gate weights are stacked column-wise in the order (update z, reset r,
candidate h~): ``W`` is ``(n_in, 3H)``, ``U`` is ``(H, 3H)``, ``b`` is ``(3H,)``.
Sequences are batched as ``(N, L, n_in)`` with a ``(N, L)`` mask; at masked
steps the hidden state is carried over unchanged, so right padding is
invisible to both directions of a bidirectional pass.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid


def _check(x, h, W, U, b):
    H = U.shape[0]
    if W.shape[1] != 3 * H or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ValueError(f"inconsistent GRU weights: W{W.shape} U{U.shape} b{b.shape}")
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input size {x.shape[-1]} does not match W rows {W.shape[0]}")
    if h.shape[-1] != H:
        raise ValueError(f"hidden size {h.shape[-1]} does not match U ({H})")


def gru_cell_forward(x, h_prev, W, U, b):
    """One GRU step. Works on single vectors or on ``(N, .)`` batches.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    h~ = tanh(x Wh + (r*h) Uh + bh), h' = (1-z)*h + z*h~
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check(x, h_prev, W, U, b)
    H = U.shape[0]
    a = x @ W + b
    z = sigmoid(a[..., :H] + h_prev @ U[:, :H])
    r = sigmoid(a[..., H : 2 * H] + h_prev @ U[:, H : 2 * H])
    cand = np.tanh(a[..., 2 * H :] + (r * h_prev) @ U[:, 2 * H :])
    return (1.0 - z) * h_prev + z * cand


def gru_sequence_forward(X, mask, W, U, b, reverse=False):
    """Run a GRU over ``X`` (N, L, n_in). Returns states (N, L, H) and a cache."""
    N, L, _ = X.shape
    H = U.shape[0]
    _check(X, np.zeros(H), W, U, b)
    A = X @ W + b  # input projections for all steps at once
    states = np.zeros((N, L, H))
    steps = []
    h = np.zeros((N, H))
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        m = mask[:, t][:, None]
        a = A[:, t]
        z = sigmoid(a[:, :H] + h @ U[:, :H])
        r = sigmoid(a[:, H : 2 * H] + h @ U[:, H : 2 * H])
        rh = r * h
        cand = np.tanh(a[:, 2 * H :] + rh @ U[:, 2 * H :])
        h_new = (1.0 - z) * h + z * cand
        steps.append((t, h, z, r, rh, cand, m))
        h = m * h_new + (1.0 - m) * h
        states[:, t] = h
    return states, (X, steps)


def gru_sequence_backward(d_states, cache, W, U):
    """Backpropagate ``d_states`` (N, L, H). Returns ``dX, dW, dU, db``."""
    X, steps = cache
    H = U.shape[0]
    N, L, _ = X.shape
    dA = np.zeros((N, L, 3 * H))
    dU = np.zeros_like(U)
    dh = np.zeros((N, H))
    Uz, Ur, Uh = U[:, :H], U[:, H : 2 * H], U[:, 2 * H :]
    for t, h_prev, z, r, rh, cand, m in reversed(steps):
        g = dh + d_states[:, t]
        d_new = m * g
        dh = (1.0 - m) * g + (1.0 - z) * d_new
        dz = d_new * (cand - h_prev)
        d_cand = d_new * z
        da_h = d_cand * (1.0 - cand * cand)
        dU[:, 2 * H :] += rh.T @ da_h
        d_rh = da_h @ Uh.T
        dr = d_rh * h_prev
        dh += d_rh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dU[:, :H] += h_prev.T @ da_z
        dU[:, H : 2 * H] += h_prev.T @ da_r
        dh += da_z @ Uz.T + da_r @ Ur.T
        dA[:, t, :H] = da_z
        dA[:, t, H : 2 * H] = da_r
        dA[:, t, 2 * H :] = da_h
    flat_dA = dA.reshape(N * L, 3 * H)
    dW = X.reshape(N * L, -1).T @ flat_dA
    db = flat_dA.sum(axis=0)
    dX = dA @ W.T
    return dX, dW, dU, db


def bigru_forward(X, mask, fwd, bwd):
    """Bidirectional pass; ``fwd``/``bwd`` are ``(W, U, b)`` triples.

    Output states are ``[forward ; backward]`` concatenated, shape (N, L, 2H).
    """
    Hf, cf = gru_sequence_forward(X, mask, *fwd)
    Hb, cb = gru_sequence_forward(X, mask, *bwd, reverse=True)
    return np.concatenate([Hf, Hb], axis=-1), (cf, cb)


def bigru_backward(d_states, cache, fwd, bwd):
    cf, cb = cache
    H = fwd[1].shape[0]
    dXf, dWf, dUf, dbf = gru_sequence_backward(d_states[..., :H], cf, fwd[0], fwd[1])
    dXb, dWb, dUb, dbb = gru_sequence_backward(d_states[..., H:], cb, bwd[0], bwd[1])
    return dXf + dXb, (dWf, dUf, dbf), (dWb, dUb, dbb)
