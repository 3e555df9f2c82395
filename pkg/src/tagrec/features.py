"""Item feature channels for the hybrid factorization models.

Sparse channels are stored as CSR matrices (items x features). When the
identity block is present it occupies feature columns ``[0, n_items)`` and the
content block (tags or TF-IDF terms) follows it.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import OOV_ID, Document, TagVocabulary
from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ItemFeatures:
    """Sparse per-item feature rows. ``kind`` is e.g. ``"identity+tags"``."""

    matrix: sp.csr_matrix
    kind: str

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def row(self, item: int) -> list[tuple[int, float]]:
        lo, hi = self.matrix.indptr[item], self.matrix.indptr[item + 1]
        return [(int(f), float(w)) for f, w in zip(self.matrix.indices[lo:hi], self.matrix.data[lo:hi])]

    @property
    def rows(self) -> list[list[tuple[int, float]]]:
        return [self.row(j) for j in range(self.n_items)]


@dataclass(frozen=True, eq=False)
class DenseItemEmbeddings:
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise DataError("dense embeddings must be a 2-D array")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("dense embeddings contain non-finite values")

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _csr(rows: Sequence[Sequence[tuple[int, float]]], n_features: int) -> sp.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.fromiter((f for r in rows for f, _ in r), dtype=np.int64, count=int(indptr[-1]))
    data = np.fromiter((w for r in rows for _, w in r), dtype=np.float64, count=int(indptr[-1]))
    m = sp.csr_matrix((data, indices, indptr), shape=(len(rows), n_features))
    m.sort_indices()
    return m


def build_identity_features(n_items: int) -> ItemFeatures:
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    return ItemFeatures(sp.identity(n_items, dtype=np.float64, format="csr"), "identity")


def _by_item(documents: Sequence[Document], n_items: int) -> dict[int, Document]:
    out = {}
    for d in documents:
        if not 0 <= d.item_id < n_items:
            raise DataError(f"document item id {d.item_id} out of range for {n_items} items")
        out[d.item_id] = d
    return out


def build_tag_features(
    documents: Sequence[Document],
    vocab: TagVocabulary,
    include_identity: bool = True,
    n_items: int | None = None,
) -> ItemFeatures:
    """One-hot indicators of each item's top-T tags (documents already re-indexed)."""
    if n_items is None:
        n_items = max((d.item_id for d in documents), default=-1) + 1
    docs = _by_item(documents, n_items)
    t = len(vocab)
    offset = n_items if include_identity else 0
    rows = []
    for j in range(n_items):
        row = [(j, 1.0)] if include_identity else []
        doc = docs.get(j)
        if doc is not None:
            for tag in sorted(doc.tag_labels):
                if not 0 <= tag < t:
                    raise DataError(f"item {j}: tag index {tag} outside vocabulary of {t}")
                row.append((offset + tag, 1.0))
        rows.append(row)
    kind = "identity+tags" if include_identity else "tags"
    return ItemFeatures(_csr(rows, offset + t), kind)


def build_tfidf_features(
    documents: Sequence[Document],
    vocab_size: int = 20000,
    include_identity: bool = True,
    n_items: int | None = None,
) -> ItemFeatures:
    """L2-normalised tf-idf rows with ``tf`` = raw count, ``idf`` = ln(N/df).

    Only the ``vocab_size`` most frequent words (the lowest word ids) are
    used; padding and OOV ids are ignored. ``N`` counts the documents given.
    """
    if not documents:
        raise DataError("tf-idf needs a non-empty corpus")
    if n_items is None:
        n_items = max(d.item_id for d in documents) + 1
    docs = _by_item(documents, n_items)
    first, last = OOV_ID + 1, OOV_ID + 1 + vocab_size

    counts = {}
    df: Counter[int] = Counter()
    for j, doc in docs.items():
        c = Counter(t for t in doc.tokens() if first <= t < last)
        counts[j] = c
        df.update(c.keys())
    n_docs = len(docs)
    n_terms = max(df, default=first - 1) - first + 1

    offset = n_items if include_identity else 0
    rows = []
    for j in range(n_items):
        row = [(j, 1.0)] if include_identity else []
        c = counts.get(j)
        if c:
            weights = {t: tf * math.log(n_docs / df[t]) for t, tf in c.items() if df[t] < n_docs}
            norm = math.sqrt(sum(w * w for w in weights.values()))
            if norm > 0:
                row.extend((offset + t - first, w / norm) for t, w in sorted(weights.items()))
        rows.append(row)
    kind = "identity+tfidf" if include_identity else "tfidf"
    return ItemFeatures(_csr(rows, offset + n_terms), kind)


def write_features(features: ItemFeatures, path: str | Path) -> None:
    """Sparse TSV ``item_id<TAB>feature_id<TAB>weight`` with a ``#`` shape header."""
    m = features.matrix
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {features.kind}\t{m.shape[0]}\t{m.shape[1]}\n")
        for j in range(m.shape[0]):
            for f, w in zip(m.indices[m.indptr[j] : m.indptr[j + 1]], m.data[m.indptr[j] : m.indptr[j + 1]]):
                fh.write(f"{j}\t{f}\t{float(w)!r}\n")


def read_features(path: str | Path) -> ItemFeatures:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise DataError(f"{path}: missing '# kind<TAB>n_items<TAB>n_features' header")
        try:
            kind, n_items, n_features = header[2:].rstrip("\n").split("\t")
            n_items, n_features = int(n_items), int(n_features)
        except ValueError:
            raise DataError(f"{path}:1: malformed header {header!r}") from None
        rows: list[list[tuple[int, float]]] = [[] for _ in range(n_items)]
        for k, line in enumerate(fh, start=2):
            try:
                j, f, w = line.split("\t")
                j, f, w = int(j), int(f), float(w)
            except ValueError:
                raise DataError(f"{path}:{k}: malformed feature line {line!r}") from None
            if not (0 <= j < n_items and 0 <= f < n_features):
                raise DataError(f"{path}:{k}: index out of range")
            rows[j].append((f, w))
    return ItemFeatures(_csr(rows, n_features), kind)


def write_embeddings(emb: DenseItemEmbeddings, path: str | Path) -> None:
    """Header ``n_items dim`` then ``item_id v1 ... v_dim`` at 9 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{emb.n_items} {emb.dim}\n")
        for j, vec in enumerate(emb.vectors):
            fh.write(str(j) + "".join(f" {v:.9g}" for v in vec) + "\n")


def read_embeddings(path: str | Path) -> DenseItemEmbeddings:
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            n_items, dim = (int(x) for x in fh.readline().split())
        except ValueError:
            raise DataError(f"{path}:1: expected header 'n_items dim'") from None
        vectors = np.zeros((n_items, dim))
        seen = np.zeros(n_items, dtype=bool)
        for k, line in enumerate(fh, start=2):
            fields = line.split()
            if len(fields) != dim + 1:
                raise DataError(f"{path}:{k}: expected {dim + 1} fields, got {len(fields)}")
            try:
                j = int(fields[0])
                vectors[j] = [float(v) for v in fields[1:]]
            except (ValueError, IndexError):
                raise DataError(f"{path}:{k}: malformed embedding line") from None
            seen[j] = True
    if not seen.all():
        raise DataError(f"{path}: {int((~seen).sum())} items have no vector")
    return DenseItemEmbeddings(vectors)
