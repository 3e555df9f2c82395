"""Pairwise-ranking training (BPR and WARP) of :class:`FactorizationModel`."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..corpus import InteractionMatrix
from ..errors import NumericalError
from . import _kernels as K
from .model import FactorizationModel

logger = logging.getLogger(__name__)

LOSSES = {"bpr": K.BPR, "warp": K.WARP}


@dataclass
class TrainConfig:
    loss: str = "warp"
    epochs: int = 100
    learning_rate: float = 0.05
    max_warp_trials: int = 100
    seed: int = 0
    l2: float = 1e-5

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if self.max_warp_trials < 1:
            raise ValueError("max_warp_trials must be >= 1")
        if self.epochs < 0 or self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError("epochs >= 0, learning_rate > 0 and l2 >= 0 are required")


def warp_rank_weights(n: int) -> np.ndarray:
    """``phi[k] = sum_{i=1..k} 1/i`` for ``k = 0..n`` (``phi[0] = 0``)."""
    phi = np.zeros(n + 1)
    total = 0.0
    for i in range(1, n + 1):
        total += 1.0 / i
        phi[i] = total
    return phi


def _train_csr(interactions: InteractionMatrix) -> tuple[np.ndarray, np.ndarray]:
    train = interactions.train_matrix()
    return train.indptr.astype(np.int64), train.indices.astype(np.int64)


def pair_gradients(model: FactorizationModel, user: int, pos: int, neg: int, multiplier: float, l2: float) -> dict:
    """Dense gradients of ``L(Delta) + l2 * sum ||theta||^2`` for one triplet.

    ``multiplier`` is dL/dDelta: ``-sigmoid(-Delta)`` for BPR and ``-phi(k)``
    for a violating WARP pair. Mainly for inspection and gradient checks.
    """
    args = model.kernel_args()
    uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P = args[:13]
    q = K.user_repr(user, uptr, uidx, udat, U)
    p_i, _ = K.item_repr(pos, iptr, iidx, idat, V, bV, E, wd, c, P, model.mode)
    p_j, _ = K.item_repr(neg, iptr, iidx, idat, V, bV, E, wd, c, P, model.mode)
    ur, ug, ir, ig, ibg, dbg, icg, pg = K.pair_grads(
        user, pos, neg, multiplier, l2, q, p_i, p_j, uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P,
        model.mode,
    )
    grads = {name: np.zeros_like(v) for name, v in model.parameters().items()}
    grads["user_vectors"][ur] = ug
    grads["item_vectors"][ir] = ig
    grads["item_biases"][ir] = ibg
    if model.mode >= 1:
        grads["dense_bias_weights"][:] = dbg
        grads["dense_intercept"][:] = icg
    if model.mode == 2:
        grads["dense_factor_projection"][:] = pg
    return grads


def _apply(model: FactorizationModel, user, pos, neg, multiplier, cfg: TrainConfig) -> None:
    args = model.kernel_args()
    uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P, aU, aV, abV, awd, ac, aP, mode = args
    q = K.user_repr(user, uptr, uidx, udat, U)
    p_i, _ = K.item_repr(pos, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
    p_j, _ = K.item_repr(neg, iptr, iidx, idat, V, bV, E, wd, c, P, mode)
    grads = K.pair_grads(
        user, pos, neg, multiplier, cfg.l2, q, p_i, p_j, uptr, uidx, udat, U, iptr, iidx, idat, V, bV, E, wd, c, P,
        mode,
    )
    K.apply_grads(cfg.learning_rate, *grads, U, V, bV, wd, c, P, aU, aV, abV, awd, ac, aP, mode)


def _sample_negative(rng, user, interactions: InteractionMatrix) -> int:
    train = set(interactions.train_items(user).tolist()) if interactions.has_split else set(
        interactions.user_items(user).tolist()
    )
    if len(train) >= interactions.n_items:
        raise ValueError(f"user {user} has no negative candidates")
    while True:
        j = int(rng.integers(interactions.n_items))
        if j not in train:
            return j


def bpr_step(model, pair, rng, cfg: TrainConfig, interactions: InteractionMatrix) -> dict:
    """One SGD step on ``-ln sigmoid(s_pos - s_neg)`` with a uniform negative."""
    user, pos = pair
    neg = _sample_negative(rng, user, interactions)
    delta = model.score(user, pos) - model.score(user, neg)
    multiplier = -float(K.sigmoid(-delta))
    _apply(model, user, pos, neg, multiplier, cfg)
    return {"negative": neg, "delta": delta, "multiplier": multiplier, "loss": float(K.log1pexp(-delta))}


def warp_step(model, pair, rng, cfg: TrainConfig, interactions: InteractionMatrix) -> dict:
    """Sample negatives until ``1 + s_neg - s_pos > 0`` or the trial budget is spent.

    The hinge gradient of a violator found at trial ``n`` is scaled by
    ``phi(floor(C / n))`` where ``C`` is the number of candidate negatives.
    Nothing is updated when no violator is found.
    """
    user, pos = pair
    n_train = len(interactions.train_items(user)) if interactions.has_split else len(interactions.user_items(user))
    n_candidates = interactions.n_items - n_train
    s_pos = model.score(user, pos)
    for n in range(1, cfg.max_warp_trials + 1):
        neg = _sample_negative(rng, user, interactions)
        margin = 1.0 + model.score(user, neg) - s_pos
        if margin > 0:
            rank = max(n_candidates // n, 1)
            weight = float(warp_rank_weights(rank)[rank])
            _apply(model, user, pos, neg, -weight, cfg)
            return {"negative": neg, "trials": n, "rank": rank, "weight": weight, "loss": weight * margin}
    return {"negative": None, "trials": cfg.max_warp_trials, "rank": 0, "weight": 0.0, "loss": 0.0}


def train(model: FactorizationModel, interactions: InteractionMatrix, cfg: TrainConfig) -> list[float]:
    """Run ``cfg.epochs`` shuffled passes over the train-tagged pairs.

    Returns the per-epoch mean pair loss (zero for WARP pairs without a
    violator). Deterministic for a fixed ``cfg.seed``.
    """
    if interactions.n_items != model.n_items or interactions.n_users != model.n_users:
        raise ValueError("interaction matrix does not match the model shape")
    tptr, tidx = _train_csr(interactions)
    pair_users = np.repeat(np.arange(interactions.n_users, dtype=np.int64), np.diff(tptr))
    pair_items = tidx.copy()
    phi = warp_rank_weights(interactions.n_items)
    log = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(pair_users.size)
        kernel_seed = int(rng.integers(0, 2**31 - 1))
        total, n_updates, bad = K.run_epoch(
            pair_users[order], pair_items[order], tptr, tidx, interactions.n_items, LOSSES[cfg.loss],
            cfg.max_warp_trials, phi, cfg.learning_rate, cfg.l2, kernel_seed, *model.kernel_args(),
        )
        if bad >= 0 or not model.all_finite():
            where = f"step {bad + 1}" if bad >= 0 else "end of epoch"
            raise NumericalError(f"non-finite loss or parameters at epoch {epoch + 1}, {where}")
        log.append(total / max(pair_users.size, 1))
        logger.debug("epoch %d: loss %.6f, %d updates", epoch + 1, log[-1], n_updates)
    return log
