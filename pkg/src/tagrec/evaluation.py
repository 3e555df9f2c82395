"""Top-K ranking, Recall@K and paired significance tests."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, Sequence

import numpy as np
from scipy.special import betainc

from .corpus import InteractionMatrix
from .errors import DataError

DEFAULT_KS = (50, 100, 150, 200)


class Scorer(Protocol):
    n_items: int

    def score_users(self, users) -> np.ndarray: ...


@dataclass
class RankingResult:
    user: int
    ranked_items: np.ndarray
    scores: np.ndarray


@dataclass
class RecallReport:
    ks: tuple[int, ...]
    mean: dict[int, float]
    per_user: np.ndarray = field(repr=False)  # (n_evaluated, len(ks))
    users: np.ndarray = field(repr=False)
    n_excluded: int = 0

    def to_dict(self, include_per_user: bool = False) -> dict:
        out = {
            "ks": list(self.ks),
            "recall": {str(k): self.mean[k] for k in self.ks},
            "n_users": int(self.users.size),
            "n_excluded": self.n_excluded,
        }
        if include_per_user:
            out["per_user"] = {
                "users": self.users.tolist(),
                "recall": self.per_user.tolist(),
            }
        return out


class RandomScorer:
    """Scores every item by an independent uniform draw (seeded per user)."""

    def __init__(self, n_users: int, n_items: int, seed: int = 0):
        self.n_users, self.n_items, self.seed = n_users, n_items, seed

    def score_users(self, users) -> np.ndarray:
        return np.stack([np.random.default_rng([self.seed, int(u)]).random(self.n_items) for u in np.atleast_1d(users)])


def _order(scores: np.ndarray, blocked: np.ndarray) -> np.ndarray:
    """Candidate item ids by descending score, ties by ascending id."""
    candidates = np.flatnonzero(~blocked)
    keyed = np.lexsort((candidates, -scores[candidates]))
    return candidates[keyed]


def _blocked_mask(interactions: InteractionMatrix, user: int) -> np.ndarray:
    blocked = np.zeros(interactions.n_items, dtype=bool)
    blocked[interactions.train_items(user)] = True
    return blocked


def rank_candidates(model: Scorer, user: int, interactions: InteractionMatrix, k_max: int) -> RankingResult:
    """Top ``k_max`` items among those not in the user's train set."""
    if interactions.excluded is not None and interactions.excluded[user]:
        raise DataError(f"user {user} has no test items and is excluded from evaluation")
    scores = model.score_users([user])[0]
    order = _order(scores, _blocked_mask(interactions, user))[:k_max]
    return RankingResult(user, order, scores[order])


def recall_at_k(ranking: RankingResult, test_items, k: int) -> float:
    test = set(int(i) for i in test_items)
    if not test:
        raise DataError(f"user {ranking.user} has an empty test set")
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for i in ranking.ranked_items[:k] if int(i) in test)
    return hits / len(test)


def evaluate(
    model: Scorer,
    interactions: InteractionMatrix,
    ks: Sequence[int] = DEFAULT_KS,
    block_size: int = 256,
    threads: int = 1,
) -> RecallReport:
    """Mean Recall@K over users that have at least one test item."""
    ks = tuple(sorted(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive")
    users = interactions.evaluable_users()
    if users.size == 0:
        raise DataError("no user has a test item; nothing to evaluate")
    k_max = ks[-1]
    per_user = np.zeros((users.size, len(ks)))

    def run_block(start: int) -> None:
        block = users[start : start + block_size]
        scores = model.score_users(block)
        for row, (u, s) in enumerate(zip(block, scores)):
            top = _order(s, _blocked_mask(interactions, int(u)))[:k_max]
            test = interactions.test_items(int(u))
            hits = np.cumsum(np.isin(top, test))
            for c, k in enumerate(ks):
                n_hit = hits[min(k, top.size) - 1] if top.size else 0
                per_user[start + row, c] = n_hit / test.size

    starts = range(0, users.size, block_size)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run_block, starts))
    else:
        for start in starts:
            run_block(start)
    # correctly rounded sums: the mean does not depend on summation order
    mean = {k: math.fsum(per_user[:, c]) / users.size for c, k in enumerate(ks)}
    return RecallReport(ks, mean, per_user, users, int(interactions.excluded.sum()))


class TTestResult(NamedTuple):
    statistic: float
    pvalue: float
    degenerate: bool


def paired_ttest(per_user_a, per_user_b) -> TTestResult:
    """Two-sided paired t-test on ``a - b``.

    Zero-variance differences are flagged ``degenerate``: t = 0, p = 1 when
    all differences vanish, otherwise t = +-inf and p = 0.
    """
    a = np.asarray(per_user_a, dtype=np.float64)
    b = np.asarray(per_user_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired t-test needs two equal-length samples of size >= 2")
    diff = a - b
    n = diff.size
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, True)
        return TTestResult(float(np.copysign(np.inf, mean)), 0.0, True)
    t = mean / (sd / np.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(float(t), p, False)
