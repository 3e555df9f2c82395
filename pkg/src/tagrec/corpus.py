"""Dataset parsing: implicit-feedback interactions, tokenized documents, tag
vocabularies and the leave-P-in train/test split.

On-disk formats understood here:

* adjacency interactions (``users.dat`` style): line ``k`` lists the items of
  user ``k``, optionally prefixed with a count field;
* pair interactions: ``user_id<TAB>item_id`` per line (the canonical TSV);
* item text as citeulike ``raw-data.csv``, a ``item_id<TAB>title<TAB>abstract``
  TSV, or canonical JSON lines;
* item tags (``item-tag.dat`` style): line ``k`` is ``count tag_id ...`` for
  item ``k``.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

logger = logging.getLogger(__name__)

PAD_ID = 0
OOV_ID = 1

_TOKEN_RE = re.compile(r"[^\W_]+")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


# -- interactions -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Binary user x item matrix stored row-wise (CSR layout).

    ``is_train`` is aligned with ``indices`` and is ``None`` until a split has
    been applied. ``excluded`` flags users without any test item.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    is_train: np.ndarray | None = None
    excluded: np.ndarray | None = None

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[Iterable[int]],
        n_users: int | None = None,
        n_items: int | None = None,
    ) -> "InteractionMatrix":
        clean = [np.unique(np.asarray(list(r), dtype=np.int64)) for r in rows]
        if n_users is None:
            n_users = len(clean)
        elif n_users < len(clean):
            raise DataError(f"{len(clean)} user rows exceed n_users={n_users}")
        clean += [np.empty(0, dtype=np.int64)] * (n_users - len(clean))
        max_item = max((int(r[-1]) for r in clean if len(r)), default=-1)
        if n_items is None:
            n_items = max_item + 1
        elif max_item >= n_items:
            raise DataError(f"item id {max_item} out of range for n_items={n_items}")
        if any(len(r) and r[0] < 0 for r in clean):
            raise DataError("negative item id")
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in clean])
        indices = np.concatenate(clean) if clean else np.empty(0, dtype=np.int64)
        return cls(n_users, n_items, indptr, indices)

    @property
    def n_pairs(self) -> int:
        return int(self.indices.size)

    @property
    def density(self) -> float:
        cells = self.n_users * self.n_items
        return self.n_pairs / cells if cells else 0.0

    @property
    def rows(self) -> list[list[int]]:
        return [self.user_items(u).tolist() for u in range(self.n_users)]

    @property
    def has_split(self) -> bool:
        return self.is_train is not None

    def user_items(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user] : self.indptr[user + 1]]

    def _split_part(self, user: int, train: bool) -> np.ndarray:
        if self.is_train is None:
            raise DataError("interaction matrix has no train/test split")
        lo, hi = self.indptr[user], self.indptr[user + 1]
        flags = self.is_train[lo:hi]
        return self.indices[lo:hi][flags if train else ~flags]

    def train_items(self, user: int) -> np.ndarray:
        return self._split_part(user, True)

    def test_items(self, user: int) -> np.ndarray:
        return self._split_part(user, False)

    def evaluable_users(self) -> np.ndarray:
        if self.excluded is None:
            raise DataError("interaction matrix has no train/test split")
        return np.flatnonzero(~self.excluded)

    def train_matrix(self) -> "InteractionMatrix":
        """The train-tagged pairs as an unsplit matrix of the same shape."""
        if self.is_train is None:
            return self
        rows = [self.train_items(u) for u in range(self.n_users)]
        return InteractionMatrix.from_rows(rows, self.n_users, self.n_items)

    def to_csr(self) -> sp.csr_matrix:
        data = np.ones(self.n_pairs, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()),
            shape=(self.n_users, self.n_items),
        )

    def stats(self) -> dict:
        return {
            "users": self.n_users,
            "items": self.n_items,
            "pairs": self.n_pairs,
            "density": self.density,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionMatrix):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and same(self.indptr, other.indptr)
            and same(self.indices, other.indices)
            and same(self.is_train, other.is_train)
            and same(self.excluded, other.excluded)
        )

    __hash__ = None  # type: ignore[assignment]


def _int_fields(line: str, path: Path, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-integer field in {line.strip()!r}") from None


def parse_interactions(
    path: str | Path,
    format: str = "adjacency",
    n_users: int | None = None,
    n_items: int | None = None,
) -> InteractionMatrix:
    """Read an implicit-feedback file into an :class:`InteractionMatrix`.

    For the adjacency format a leading count field is detected at file level:
    it is stripped only if *every* non-empty line starts with the number of
    remaining fields. Duplicated pairs are collapsed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    if format == "adjacency":
        parsed = [_int_fields(line, path, k + 1) for k, line in enumerate(lines)]
        non_empty = [f for f in parsed if f]
        counted = bool(non_empty) and all(f[0] == len(f) - 1 for f in non_empty)
        rows = [f[1:] if (counted and f) else f for f in parsed]
        for k, row in enumerate(rows):
            if any(i < 0 for i in row):
                raise DataError(f"{path}:{k + 1}: negative item id")
            if n_items is not None and any(i >= n_items for i in row):
                raise DataError(f"{path}:{k + 1}: item id overflows n_items={n_items}")
        if n_users is not None and len(rows) > n_users:
            raise DataError(f"{path}: {len(rows)} user lines exceed n_users={n_users}")
    elif format == "pairs":
        by_user: dict[int, list[int]] = {}
        for k, line in enumerate(lines):
            if not line.strip():
                continue
            fields = _int_fields(line, path, k + 1)
            if len(fields) != 2:
                raise DataError(f"{path}:{k + 1}: expected 'user<TAB>item', got {line!r}")
            u, i = fields
            if u < 0 or i < 0:
                raise DataError(f"{path}:{k + 1}: negative id")
            if n_users is not None and u >= n_users:
                raise DataError(f"{path}:{k + 1}: user id overflows n_users={n_users}")
            if n_items is not None and i >= n_items:
                raise DataError(f"{path}:{k + 1}: item id overflows n_items={n_items}")
            by_user.setdefault(u, []).append(i)
        n_rows = max(by_user, default=-1) + 1
        rows = [by_user.get(u, []) for u in range(n_rows)]
    else:
        raise ValueError(f"unknown interaction format {format!r}")

    m = InteractionMatrix.from_rows(rows, n_users, n_items)
    logger.info("parsed %s: %d users, %d items, %d pairs", path, m.n_users, m.n_items, m.n_pairs)
    return m


def write_interactions(m: InteractionMatrix, path: str | Path) -> None:
    """Write the canonical ``user<TAB>item`` TSV (ascending user, then item)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(m.n_users):
            for i in m.user_items(u):
                fh.write(f"{u}\t{i}\n")


# -- split --------------------------------------------------------------------


@dataclass(frozen=True)
class SplitConfig:
    p_train_per_user: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.p_train_per_user < 1:
            raise ValueError("p_train_per_user must be >= 1")


def split_leave_p_in(m: InteractionMatrix, cfg: SplitConfig) -> InteractionMatrix:
    """Tag ``min(P, |items|)`` random items per user as train, the rest test.

    Users are visited in index order with a single generator, so the split is a
    pure function of ``(m, cfg)``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    is_train = np.zeros(m.n_pairs, dtype=bool)
    excluded = np.zeros(m.n_users, dtype=bool)
    for u in range(m.n_users):
        lo, hi = int(m.indptr[u]), int(m.indptr[u + 1])
        n = hi - lo
        if n:
            chosen = rng.choice(n, size=min(cfg.p_train_per_user, n), replace=False)
            is_train[lo + chosen] = True
        excluded[u] = n <= cfg.p_train_per_user
    return InteractionMatrix(m.n_users, m.n_items, m.indptr, m.indices, is_train, excluded)


# -- text ---------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop pure-digit tokens."""
    return [tok for tok in _TOKEN_RE.findall(text.lower()) if not tok.isdigit()]


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_RE.split(text.strip()) if s]


def text_to_sentences(title: str, abstract: str) -> list[list[str]]:
    """Title becomes sentence 0; sentences without any token are dropped."""
    out = []
    for chunk in [title, *split_sentences(abstract)]:
        toks = tokenize(chunk)
        if toks:
            out.append(toks)
    return out


@dataclass(frozen=True)
class WordVocabulary:
    """Word ids: 0 is padding, 1 is OOV, then words by descending frequency."""

    words: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def build(cls, token_docs: Iterable[Iterable[Iterable[str]]], size: int = 20000) -> "WordVocabulary":
        counts: Counter[str] = Counter()
        for doc in token_docs:
            for sentence in doc:
                counts.update(sentence)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:size]
        words = ("<pad>", "<unk>", *(w for w, _ in ranked))
        return cls(words, {w: k for k, w in enumerate(words)})

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "WordVocabulary":
        words = tuple(words)
        return cls(words, {w: k for k, w in enumerate(words)})

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index.get(t, OOV_ID) for t in tokens)


@dataclass(frozen=True)
class Document:
    item_id: int
    sentences: tuple[tuple[int, ...], ...]
    tag_labels: frozenset[int] = frozenset()

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def tokens(self) -> list[int]:
        return [t for s in self.sentences for t in s]


@dataclass(frozen=True)
class RawDocument:
    """Tokenized text before vocabulary mapping; tags are raw tag ids."""

    item_id: int
    title: str
    sentences: list[list[str]]
    tags: list[int]


def _read_tag_map(path: Path, n_raw_tags: int | None) -> dict[int, list[int]]:
    if not path.exists():
        raise DataError(f"item-tag file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            fields = _int_fields(line, path, k + 1)
            if not fields:
                out[k] = []
                continue
            count, tags = fields[0], fields[1:]
            if count != len(tags):
                raise DataError(f"{path}:{k + 1}: count {count} but {len(tags)} tag ids")
            for t in tags:
                if t < 0 or (n_raw_tags is not None and t >= n_raw_tags):
                    raise DataError(f"{path}:{k + 1}: tag id {t} out of range (raw tag count {n_raw_tags})")
            out[k] = sorted(set(tags))
    return out


def read_raw_tags(path: str | Path) -> list[str]:
    """One tag string per line (citeulike ``tags.dat``)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"tag file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def read_raw_documents(
    path: str | Path,
    tag_map_path: str | Path | None = None,
    n_raw_tags: int | None = None,
) -> list[RawDocument]:
    """Load item texts (CSV, TSV or canonical JSONL) with their raw tag ids."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"document file not found: {path}")
    texts: list[tuple[int, str, list[list[str]], list[int] | None]] = []
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for k, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    texts.append((int(rec["id"]), rec.get("title", ""), rec["sentences"], rec.get("tags")))
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{k + 1}: bad document record ({exc})") from None
    elif path.suffix == ".csv":
        # citeulike raw-data.csv: doc.id (1-based), title, citeulike.id, raw.title, raw.abstract
        with open(path, encoding="utf-8", errors="replace", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                if len(row) < 5:
                    raise DataError(f"{path}:{reader.line_num}: expected 5 columns, got {len(row)}")
                try:
                    item = int(row[0]) - 1
                except ValueError:
                    raise DataError(f"{path}:{reader.line_num}: bad doc.id {row[0]!r}") from None
                texts.append((item, row[3], text_to_sentences(row[3], row[4]), None))
    else:
        with open(path, encoding="utf-8") as fh:
            for k, line in enumerate(fh):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{k + 1}: expected 'item_id<TAB>title<TAB>abstract'")
                try:
                    item = int(parts[0])
                except ValueError:
                    raise DataError(f"{path}:{k + 1}: bad item id {parts[0]!r}") from None
                texts.append((item, parts[1], text_to_sentences(parts[1], parts[2]), None))

    tag_map = _read_tag_map(Path(tag_map_path), n_raw_tags) if tag_map_path is not None else {}
    docs = []
    seen = set()
    for item, title, sentences, tags in sorted(texts, key=lambda rec: rec[0]):
        if item < 0:
            raise DataError(f"{path}: negative item id {item}")
        if item in seen:
            raise DataError(f"{path}: duplicate item id {item}")
        seen.add(item)
        if tags is None:
            tags = tag_map.get(item, [])
        else:
            for t in tags:
                if t < 0 or (n_raw_tags is not None and t >= n_raw_tags):
                    raise DataError(f"{path}: item {item} has tag id {t} out of range")
        docs.append(RawDocument(item, title, [list(s) for s in sentences], sorted(set(tags))))
    return docs


def write_raw_documents(docs: Sequence[RawDocument], path: str | Path) -> None:
    """Canonical JSONL: ``{"id", "title", "sentences", "tags"}`` per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            rec = {"id": d.item_id, "title": d.title, "sentences": d.sentences, "tags": d.tags}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def encode_documents(
    raw: Sequence[RawDocument],
    vocab: WordVocabulary,
    s_max: int | None = 10,
    w_max: int | None = 50,
) -> list[Document]:
    docs = []
    for r in raw:
        sentences = r.sentences[:s_max] if s_max is not None else r.sentences
        encoded = tuple(vocab.encode(s[:w_max] if w_max is not None else s) for s in sentences)
        docs.append(Document(r.item_id, encoded, frozenset(r.tags)))
    return docs


def parse_documents(
    path: str | Path,
    tag_map_path: str | Path | None = None,
    vocab_size: int = 20000,
    s_max: int | None = 10,
    w_max: int | None = 50,
    n_raw_tags: int | None = None,
) -> tuple[list[Document], WordVocabulary]:
    """Tokenize item texts and map them onto a frequency-ranked vocabulary.

    Returned documents carry *raw* tag ids; pass them through
    :func:`build_tag_vocabulary` to re-index onto the top-T tags.
    """
    raw = read_raw_documents(path, tag_map_path, n_raw_tags)
    vocab = WordVocabulary.build((r.sentences for r in raw), vocab_size)
    return encode_documents(raw, vocab, s_max, w_max), vocab


# -- tags ---------------------------------------------------------------------


@dataclass(frozen=True)
class TagVocabulary:
    """The top-T tags. ``raw_ids[k]`` is the raw tag id of vocabulary entry k."""

    tags: tuple[str, ...]
    frequency: dict[str, int]
    raw_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tags)


def build_tag_vocabulary(
    documents: Sequence[Document],
    raw_tags: Sequence[str],
    t: int = 300,
) -> tuple[TagVocabulary, list[Document]]:
    """Keep the ``t`` tags carried by most items (ties: lexicographic).

    Returns the vocabulary and the documents with ``tag_labels`` re-indexed
    into ``[0, t)``; tags outside the top ``t`` are dropped.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    counts: Counter[int] = Counter()
    for doc in documents:
        counts.update(doc.tag_labels)
    if len(counts) < t:
        raise DataError(f"requested {t} tags but the corpus has only {len(counts)} distinct tags")
    for raw_id in counts:
        if raw_id >= len(raw_tags):
            raise DataError(f"tag id {raw_id} has no name (raw tag count {len(raw_tags)})")
    ranked = sorted(counts, key=lambda rid: (-counts[rid], raw_tags[rid], rid))[:t]
    remap = {rid: k for k, rid in enumerate(ranked)}
    vocab = TagVocabulary(
        tags=tuple(raw_tags[rid] for rid in ranked),
        frequency={raw_tags[rid]: counts[rid] for rid in ranked},
        raw_ids=tuple(ranked),
    )
    reindexed = [
        Document(d.item_id, d.sentences, frozenset(remap[r] for r in d.tag_labels if r in remap))
        for d in documents
    ]
    return vocab, reindexed


def write_tag_vocabulary(vocab: TagVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, (tag, rid) in enumerate(zip(vocab.tags, vocab.raw_ids)):
            fh.write(f"{k}\t{rid}\t{tag}\t{vocab.frequency[tag]}\n")
