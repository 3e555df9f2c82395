"""Seeded synthetic datasets with planted structure, for tests and demos.

:func:`write_toy_citeulike` writes the same four files the citeulike-a
release ships (``users.dat``, ``raw-data.csv``, ``item-tag.dat``,
``tags.dat``) so the full command-line pipeline can run without the real data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .corpus import InteractionMatrix


def planted_blocks(
    n_users: int = 50,
    n_items: int = 200,
    n_blocks: int = 5,
    items_per_user: int = 20,
    noise: float = 0.1,
    seed: int = 0,
) -> tuple[InteractionMatrix, np.ndarray, np.ndarray]:
    """Users and items split into ``n_blocks`` groups; users mostly like items
    of their own group.

    Returns ``(interactions, user_block, item_block)``.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) % n_blocks
    item_block = np.arange(n_items) % n_blocks
    rows = []
    for u in range(n_users):
        own = np.flatnonzero(item_block == user_block[u])
        other = np.flatnonzero(item_block != user_block[u])
        n_noise = rng.binomial(items_per_user, noise)
        picked = np.concatenate([
            rng.choice(own, size=min(items_per_user - n_noise, own.size), replace=False),
            rng.choice(other, size=n_noise, replace=False),
        ])
        rows.append(np.sort(picked))
    return InteractionMatrix.from_rows(rows, n_users, n_items), user_block, item_block


def trigger_corpus():
    """Eight tiny documents where tag ``t`` is present iff keyword ``t`` occurs.

    Returns ``(documents, keyword_ids, n_words)``. Word ids 2..5 are the
    keywords of tags 0..3; ids 6.. are filler.
    """
    from .corpus import Document

    keywords = [2, 3, 4, 5]
    filler = list(range(6, 18))
    rng = np.random.default_rng(7)
    tag_sets = [{0}, {1}, {2}, {3}, {0, 1}, {2, 3}, {0, 2}, {1, 3}]
    docs = []
    for item, tags in enumerate(tag_sets):
        sentences = []
        for t in sorted(tags):
            words = list(rng.choice(filler, size=5, replace=False))
            words.insert(int(rng.integers(0, 6)), keywords[t])
            sentences.append(tuple(int(w) for w in words))
        sentences.append(tuple(int(w) for w in rng.choice(filler, size=4, replace=False)))
        docs.append(Document(item, tuple(sentences), frozenset(tags)))
    return docs, keywords, 18


def write_toy_citeulike(
    directory: str | Path,
    n_users: int = 60,
    n_items: int = 120,
    n_blocks: int = 4,
    items_per_user: int = 16,
    seed: int = 0,
) -> dict[str, Path]:
    """Write a small citeulike-a-shaped dataset whose text and tags follow the
    same planted blocks as the interactions. Returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m, _, item_block = planted_blocks(n_users, n_items, n_blocks, items_per_user, noise=0.1, seed=seed)
    rng = np.random.default_rng([seed, 1])

    topic_words = [[f"topic{b}word{k}" for k in range(12)] for b in range(n_blocks)]
    common = [f"common{k}" for k in range(30)]
    tags = [f"tag-{b}-{k}" for b in range(n_blocks) for k in range(3)] + ["misc-a", "misc-b"]

    paths = {
        "users": directory / "users.dat",
        "documents": directory / "raw-data.csv",
        "item_tags": directory / "item-tag.dat",
        "tags": directory / "tags.dat",
    }
    with open(paths["users"], "w", encoding="utf-8", newline="\n") as fh:
        for u in range(m.n_users):
            items = m.user_items(u)
            fh.write(" ".join([str(len(items)), *map(str, items)]) + "\n")

    with open(paths["documents"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["doc.id", "title", "citeulike.id", "raw.title", "raw.abstract"])
        for j in range(n_items):
            b = int(item_block[j])

            def sentence(n_topic, n_common):
                words = list(rng.choice(topic_words[b], n_topic)) + list(rng.choice(common, n_common))
                rng.shuffle(words)
                return " ".join(words)

            title = sentence(2, 2).capitalize()
            n_sent = int(rng.integers(2, 5))
            abstract = " ".join(sentence(3, 5).capitalize() + "." for _ in range(n_sent))
            writer.writerow([j + 1, title.lower(), 1000 + j, title, abstract])

    with open(paths["item_tags"], "w", encoding="utf-8", newline="\n") as fh:
        for j in range(n_items):
            b = int(item_block[j])
            own = [b * 3 + k for k in range(3)]
            chosen = sorted(set(rng.choice(own, size=int(rng.integers(1, 3)), replace=False).tolist()))
            if rng.random() < 0.2:
                chosen.append(len(tags) - 2 + int(rng.integers(0, 2)))
            fh.write(" ".join([str(len(chosen)), *map(str, chosen)]) + "\n")

    with open(paths["tags"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(tags) + "\n")
    return paths
