"""Hierarchical attention network for multi-label tag prediction.

Words of each sentence go through a bi-GRU and word-level attention to give a
sentence vector; sentence vectors go through a second bi-GRU and
sentence-level attention to give the document vector (size 2H), which feeds
a sigmoid output layer with one unit per tag.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..corpus import Document
from .attention import attention_backward, attention_forward
from .gru import bigru_backward, bigru_forward

BCE_EPS = 1e-7


@dataclass
class EncoderConfig:
    s_max: int = 10
    w_max: int = 50
    embed_dim: int = 100
    hidden: int = 50
    attn_dim: int = 100
    n_tags: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "seed" and not value > 0 and not (name == "epochs" and value == 0):
                raise ValueError(f"encoder config: {name} must be positive, got {value}")

    @property
    def doc_dim(self) -> int:
        return 2 * self.hidden


def param_shapes(cfg: EncoderConfig, n_words: int) -> dict[str, tuple[int, ...]]:
    E, H, A, T = cfg.embed_dim, cfg.hidden, cfg.attn_dim, cfg.n_tags
    shapes = {"embedding": (n_words, E)}
    for level, n_in in (("word", E), ("sent", 2 * H)):
        for direction in ("fwd", "bwd"):
            shapes[f"{level}_gru_{direction}.W"] = (n_in, 3 * H)
            shapes[f"{level}_gru_{direction}.U"] = (H, 3 * H)
            shapes[f"{level}_gru_{direction}.b"] = (3 * H,)
        shapes[f"{level}_attn.W"] = (2 * H, A)
        shapes[f"{level}_attn.b"] = (A,)
        shapes[f"{level}_attn.u"] = (A,)
    shapes["output.W"] = (2 * H, T)
    shapes["output.b"] = (T,)
    return shapes


@dataclass
class EncoderParams:
    config: EncoderConfig
    weights: dict[str, np.ndarray] = field(repr=False)

    @property
    def n_words(self) -> int:
        return self.weights["embedding"].shape[0]

    def gru(self, level: str, direction: str):
        p = f"{level}_gru_{direction}."
        return self.weights[p + "W"], self.weights[p + "U"], self.weights[p + "b"]

    def attn(self, level: str):
        p = f"{level}_attn."
        return self.weights[p + "W"], self.weights[p + "b"], self.weights[p + "u"]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def validate(self) -> None:
        expected = param_shapes(self.config, self.n_words)
        if set(expected) != set(self.weights):
            raise ValueError("encoder parameter blocks do not match the configuration")
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name}: shape {self.weights[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.weights[name])):
                raise ValueError(f"{name}: non-finite entries")


def init_params(cfg: EncoderConfig, n_words: int, seed: int | None = None) -> EncoderParams:
    """All blocks drawn from uniform(-0.05, 0.05) in a fixed order."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    weights = {name: rng.uniform(-0.05, 0.05, size=shape) for name, shape in param_shapes(cfg, n_words).items()}
    return EncoderParams(cfg, weights)


@dataclass
class Batch:
    tokens: np.ndarray  # (B, S, W) int
    word_mask: np.ndarray  # (B, S, W) bool
    sent_mask: np.ndarray  # (B, S) bool


def make_batch(docs: Sequence[Document], s_max: int, w_max: int) -> Batch:
    """Right-pad documents into dense arrays, truncating to ``s_max``/``w_max``."""
    sents = [[s[:w_max] for s in d.sentences[:s_max] if len(s)] for d in docs]
    for d, ss in zip(docs, sents):
        if not ss:
            raise ValueError(f"document {d.item_id} has no tokens")
    S = max(len(ss) for ss in sents)
    W = max(len(s) for ss in sents for s in ss)
    tokens = np.zeros((len(docs), S, W), dtype=np.int64)
    word_mask = np.zeros((len(docs), S, W), dtype=bool)
    for b, ss in enumerate(sents):
        for k, s in enumerate(ss):
            tokens[b, k, : len(s)] = s
            word_mask[b, k, : len(s)] = True
    return Batch(tokens, word_mask, word_mask.any(axis=-1))


def forward_batch(params: EncoderParams, batch: Batch):
    """Returns ``(probs (B,T), doc_vecs (B,2H), cache)``."""
    w = params.weights
    B, S, L = batch.tokens.shape
    H = params.config.hidden
    flat_tokens = batch.tokens.reshape(B * S, L)
    flat_mask = batch.word_mask.reshape(B * S, L)

    X = w["embedding"][flat_tokens]
    Hw, c_wgru = bigru_forward(X, flat_mask.astype(np.float64), params.gru("word", "fwd"), params.gru("word", "bwd"))
    sent_vecs, word_alpha, c_wattn = attention_forward(Hw, flat_mask, *params.attn("word"), allow_empty=True)
    sent_vecs = sent_vecs.reshape(B, S, 2 * H)

    sm = batch.sent_mask.astype(np.float64)
    Hs, c_sgru = bigru_forward(sent_vecs, sm, params.gru("sent", "fwd"), params.gru("sent", "bwd"))
    doc_vecs, sent_alpha, c_sattn = attention_forward(Hs, batch.sent_mask, *params.attn("sent"))

    logits = doc_vecs @ w["output.W"] + w["output.b"]
    probs = expit(logits)
    cache = {
        "tokens": flat_tokens,
        "wgru": c_wgru,
        "wattn": c_wattn,
        "sgru": c_sgru,
        "sattn": c_sattn,
        "doc": doc_vecs,
        "word_alpha": word_alpha.reshape(B, S, L),
        "sent_alpha": sent_alpha,
    }
    return probs, doc_vecs, cache


def backward_batch(params: EncoderParams, cache, d_logits) -> dict[str, np.ndarray]:
    """Gradients of every parameter block given dLoss/dlogits (B, T)."""
    w = params.weights
    H = params.config.hidden
    grads: dict[str, np.ndarray] = {}
    grads["output.W"] = cache["doc"].T @ d_logits
    grads["output.b"] = d_logits.sum(axis=0)
    d_doc = d_logits @ w["output.W"].T

    W_s, _, u_s = params.attn("sent")
    dHs, grads["sent_attn.W"], grads["sent_attn.b"], grads["sent_attn.u"] = attention_backward(
        d_doc, cache["sattn"], W_s, u_s
    )
    fwd, bwd = params.gru("sent", "fwd"), params.gru("sent", "bwd")
    d_sent, gf, gb = bigru_backward(dHs, cache["sgru"], fwd, bwd)
    for direction, g in (("fwd", gf), ("bwd", gb)):
        for key, value in zip("WUb", g):
            grads[f"sent_gru_{direction}.{key}"] = value

    B, S = d_sent.shape[:2]
    W_w, _, u_w = params.attn("word")
    dHw, grads["word_attn.W"], grads["word_attn.b"], grads["word_attn.u"] = attention_backward(
        d_sent.reshape(B * S, 2 * H), cache["wattn"], W_w, u_w
    )
    fwd, bwd = params.gru("word", "fwd"), params.gru("word", "bwd")
    dX, gf, gb = bigru_backward(dHw, cache["wgru"], fwd, bwd)
    for direction, g in (("fwd", gf), ("bwd", gb)):
        for key, value in zip("WUb", g):
            grads[f"word_gru_{direction}.{key}"] = value

    d_emb = np.zeros_like(w["embedding"])
    np.add.at(d_emb, cache["tokens"].reshape(-1), dX.reshape(-1, dX.shape[-1]))
    grads["embedding"] = d_emb
    return grads


def bce_loss(tag_probs, labels) -> float:
    """Mean binary cross-entropy over tags (and over rows, for 2-D input)."""
    p = np.clip(np.asarray(tag_probs, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def label_matrix(docs: Sequence[Document], n_tags: int) -> np.ndarray:
    y = np.zeros((len(docs), n_tags))
    for b, d in enumerate(docs):
        for t in d.tag_labels:
            if not 0 <= t < n_tags:
                raise ValueError(f"document {d.item_id}: tag index {t} >= {n_tags}")
            y[b, t] = 1.0
    return y


def loss_and_grads(params: EncoderParams, docs: Sequence[Document]):
    """Mean BCE of a batch and its gradient w.r.t. every parameter block.

    The gradient is that of the unclamped loss, (p - y) / (B T) at the logits;
    it coincides with the clamped loss wherever no probability is clamped.
    """
    cfg = params.config
    batch = make_batch(docs, cfg.s_max, cfg.w_max)
    y = label_matrix(docs, cfg.n_tags)
    probs, _, cache = forward_batch(params, batch)
    loss = bce_loss(probs, y)
    d_logits = (probs - y) / y.size
    return loss, backward_batch(params, cache, d_logits)


def forward_document(doc: Document, params: EncoderParams):
    """Encode one document.

    Returns ``(tag_probs (T,), doc_vec (2H,), trace)`` where ``trace`` holds
    the word attention weights of each sentence and the sentence weights.
    """
    if not any(len(s) for s in doc.sentences):
        raise ValueError(f"document {doc.item_id} is empty")
    cfg = params.config
    batch = make_batch([doc], cfg.s_max, cfg.w_max)
    probs, doc_vecs, cache = forward_batch(params, batch)
    lengths = batch.word_mask[0].sum(axis=-1)
    trace = {
        "word": [cache["word_alpha"][0, k, :n].copy() for k, n in enumerate(lengths)],
        "sentence": cache["sent_alpha"][0].copy(),
    }
    return probs[0], doc_vecs[0], trace
