"""Mini-batch Adam training of the tag predictor and document-vector export."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict
from typing import Sequence

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..corpus import Document
from ..errors import NumericalError
from ..features import DenseItemEmbeddings
from .han import EncoderConfig, EncoderParams, forward_batch, init_params, loss_and_grads, make_batch

logger = logging.getLogger(__name__)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def trainable_documents(docs: Sequence[Document]) -> list[Document]:
    """Documents with at least one top-T tag and at least one token."""
    return [d for d in docs if d.tag_labels and d.n_tokens > 0]


def train_encoder(
    docs: Sequence[Document],
    cfg: EncoderConfig,
    n_words: int,
    progress: bool = False,
) -> tuple[EncoderParams, list[float]]:
    """Fit the network on the tagged documents; returns params and per-epoch mean BCE."""
    params = init_params(cfg, n_words)
    train_docs = trainable_documents(docs)
    if cfg.epochs and not train_docs:
        raise ValueError("no document carries a top-T tag; nothing to train on")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(cfg.learning_rate)
    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_docs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_docs[k] for k in order[start : start + cfg.batch_size]]
            loss, grads = loss_and_grads(params, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(
                    f"encoder diverged at epoch {epoch + 1}, batch {start // cfg.batch_size + 1} (loss={loss})"
                )
            opt.step(params.weights, grads)
            total += loss * len(batch)
        log.append(total / len(train_docs))
        if progress:
            logger.info("encoder epoch %d/%d  bce=%.6f", epoch + 1, cfg.epochs, log[-1])
    return params, log


def export_embeddings(
    docs: Sequence[Document],
    params: EncoderParams,
    n_items: int | None = None,
    batch_size: int = 256,
) -> DenseItemEmbeddings:
    """Document vectors for every item; items without text get zeros (with a warning)."""
    if n_items is None:
        n_items = max((d.item_id for d in docs), default=-1) + 1
    cfg = params.config
    vectors = np.zeros((n_items, cfg.doc_dim))
    covered = np.zeros(n_items, dtype=bool)
    encodable = [d for d in docs if d.n_tokens > 0]
    for start in range(0, len(encodable), batch_size):
        chunk = encodable[start : start + batch_size]
        _, doc_vecs, _ = forward_batch(params, make_batch(chunk, cfg.s_max, cfg.w_max))
        for d, vec in zip(chunk, doc_vecs):
            vectors[d.item_id] = vec
            covered[d.item_id] = True
    missing = int((~covered).sum())
    if missing:
        warnings.warn(f"{missing} items have no text; their embeddings are zero", stacklevel=2)
    return DenseItemEmbeddings(vectors)


ENCODER_FORMAT = "tagrec-encoder/1"


def save_encoder(path, params: EncoderParams, words: Sequence[str], tags: Sequence[str], log: Sequence[float]) -> None:
    """Checkpoint with config, word list, tag list, loss log and all weights."""
    meta = {"config": asdict(params.config), "words": list(words), "tags": list(tags), "log": list(log)}
    save_checkpoint(path, ENCODER_FORMAT, meta, params.weights)


def load_encoder(path):
    """Returns ``(params, words, tags, log)``."""
    meta, arrays = load_checkpoint(path, ENCODER_FORMAT)
    params = EncoderParams(EncoderConfig(**meta["config"]), arrays)
    params.validate()
    return params, meta["words"], meta["tags"], meta["log"]
