"""Additive attention pooling: e_t = u . tanh(h_t W + b), alpha = softmax(e)."""

from __future__ import annotations

import numpy as np


def masked_softmax(scores, mask, allow_empty=False):
    """Softmax along the last axis with masked entries set to exactly 0.

    Masked scores are replaced by ``-inf`` before normalising. Rows with no
    unmasked entry raise unless ``allow_empty``, in which case they are all 0.
    """
    mask = np.asarray(mask, dtype=bool)
    empty = ~mask.any(axis=-1)
    if empty.any() and not allow_empty:
        raise ValueError("attention over a fully masked sequence")
    s = np.where(mask, scores, -np.inf)
    top = np.max(np.where(empty[..., None], 0.0, s), axis=-1, keepdims=True)
    ex = np.where(mask, np.exp(s - top), 0.0)
    total = ex.sum(axis=-1, keepdims=True)
    return ex / np.where(total > 0, total, 1.0)


def attention_forward(states, mask, W, b, u, allow_empty=False):
    """Pool ``states`` (N, L, D) into contexts (N, D). Returns (context, alpha, cache)."""
    proj = np.tanh(states @ W + b)  # (N, L, A)
    scores = proj @ u
    alpha = masked_softmax(scores, mask, allow_empty)
    context = np.einsum("nl,nld->nd", alpha, states)
    return context, alpha, (states, proj, alpha)


def attention_backward(d_context, cache, W, u):
    """Returns ``d_states, dW, db, du``."""
    states, proj, alpha = cache
    d_alpha = np.einsum("nld,nd->nl", states, d_context)
    d_states = alpha[..., None] * d_context[:, None, :]
    d_scores = alpha * (d_alpha - (alpha * d_alpha).sum(axis=-1, keepdims=True))
    du = np.einsum("nla,nl->a", proj, d_scores)
    d_pre = d_scores[..., None] * u * (1.0 - proj * proj)
    flat = d_pre.reshape(-1, d_pre.shape[-1])
    dW = states.reshape(-1, states.shape[-1]).T @ flat
    db = flat.sum(axis=0)
    d_states += d_pre @ W.T
    return d_states, dW, db, du


def attention_pool(states, W, b, u, mask=None):
    """Pool one sequence of state vectors ``(L, D)``.

    Returns ``(context, alpha)``; masked positions receive weight exactly 0.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("attention needs at least one state vector")
    if mask is None:
        mask = np.ones(states.shape[0], dtype=bool)
    context, alpha, _ = attention_forward(states[None], np.asarray(mask)[None], W, b, u)
    return context[0], alpha[0]
