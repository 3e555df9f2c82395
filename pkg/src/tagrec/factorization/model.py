"""Feature-based matrix factorization: each user/item vector is the weighted
sum of the latent vectors of its features, and the raw score of a pair is
``q_u . p_j + b_j``; the interaction probability is its sigmoid.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..checkpoint import load_checkpoint, save_checkpoint
from ..corpus import InteractionMatrix
from ..errors import DataError

METADATA_MODES = {"none": 0, "bias": 1, "bias+factors": 2}
MODEL_FORMAT = "tagrec-mf/1"


def _as_csr(m, n_rows: int) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    if m.shape[0] != n_rows:
        raise DataError(f"feature matrix has {m.shape[0]} rows, expected {n_rows}")
    m.sum_duplicates()
    m.sort_indices()
    m.indptr = m.indptr.astype(np.int64)
    m.indices = m.indices.astype(np.int64)
    return m


class FactorizationModel:
    """Parameters plus the feature matrices they are defined over.

    Parameters
    ----------
    user_features, item_features:
        CSR matrices (rows x feature columns). Identity matrices give plain MF.
    dense:
        Optional ``(n_items, D)`` document embeddings used as item metadata.
    d:
        Latent dimension.
    metadata:
        ``"none"``, ``"bias"`` (embedding projected to a scalar added to the
        item bias) or ``"bias+factors"`` (also projected into the item vector).
    """

    def __init__(self, user_features, item_features, dense=None, d=200, metadata=None, seed=0):
        self.n_users = user_features.shape[0]
        self.n_items = item_features.shape[0]
        self.user_features = _as_csr(user_features, self.n_users)
        self.item_features = _as_csr(item_features, self.n_items)
        if metadata is None:
            metadata = "none" if dense is None else "bias"
        if metadata not in METADATA_MODES:
            raise ValueError(f"unknown metadata mode {metadata!r}")
        if metadata != "none" and dense is None:
            raise DataError(f"metadata mode {metadata!r} needs dense item embeddings")
        self.metadata = metadata
        if dense is None or metadata == "none":
            dense = np.zeros((self.n_items, 0))
        dense = np.ascontiguousarray(dense, dtype=np.float64)
        if dense.shape[0] != self.n_items:
            raise DataError(f"dense embeddings cover {dense.shape[0]} items, expected {self.n_items}")
        self.dense = dense
        self.d = d

        rng = np.random.default_rng(seed)
        D = dense.shape[1]
        self.user_vectors = rng.normal(0.0, 1.0 / d, size=(self.user_features.shape[1], d))
        self.item_vectors = rng.normal(0.0, 1.0 / d, size=(self.item_features.shape[1], d))
        self.item_biases = np.zeros(self.item_features.shape[1])
        self.dense_bias_weights = np.zeros(D)
        self.dense_intercept = np.zeros(1)
        self.dense_factor_projection = np.zeros((D if metadata == "bias+factors" else 0, d))
        self.accumulators = {name: np.ones_like(value) for name, value in self.parameters().items()}

    @property
    def mode(self) -> int:
        return METADATA_MODES[self.metadata]

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "user_vectors": self.user_vectors,
            "item_vectors": self.item_vectors,
            "item_biases": self.item_biases,
            "dense_bias_weights": self.dense_bias_weights,
            "dense_intercept": self.dense_intercept,
            "dense_factor_projection": self.dense_factor_projection,
        }

    def copy(self) -> "FactorizationModel":
        other = object.__new__(FactorizationModel)
        other.__dict__.update(self.__dict__)
        for name, value in self.parameters().items():
            setattr(other, name, value.copy())
        other.accumulators = {k: v.copy() for k, v in self.accumulators.items()}
        return other

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.parameters().values())

    def kernel_args(self) -> tuple:
        """Arrays in the order the compiled kernels expect (views, not copies)."""
        uf, itf = self.user_features, self.item_features
        acc = self.accumulators
        return (
            uf.indptr, uf.indices, uf.data, self.user_vectors,
            itf.indptr, itf.indices, itf.data, self.item_vectors, self.item_biases,
            self.dense, self.dense_bias_weights, self.dense_intercept, self.dense_factor_projection,
            acc["user_vectors"], acc["item_vectors"], acc["item_biases"],
            acc["dense_bias_weights"], acc["dense_intercept"], acc["dense_factor_projection"],
            self.mode,
        )

    # -- scoring --------------------------------------------------------------

    def user_representations(self, users=None) -> np.ndarray:
        uf = self.user_features if users is None else self.user_features[np.atleast_1d(users)]
        return np.asarray(uf @ self.user_vectors)

    def item_representations(self) -> tuple[np.ndarray, np.ndarray]:
        """``(P, b)``: item vectors ``(n_items, d)`` and item biases ``(n_items,)``."""
        P = np.asarray(self.item_features @ self.item_vectors)
        b = np.asarray(self.item_features @ self.item_biases).ravel()
        if self.mode >= 1:
            b = b + self.dense @ self.dense_bias_weights + self.dense_intercept[0]
        if self.mode == 2:
            P = P + self.dense @ self.dense_factor_projection
        return P, b

    def _check_index(self, user, item=None):
        if not 0 <= user < self.n_users:
            raise IndexError(f"user {user} out of range [0, {self.n_users})")
        if item is not None and not 0 <= item < self.n_items:
            raise IndexError(f"item {item} out of range [0, {self.n_items})")

    def score(self, user: int, item: int) -> float:
        """Raw score ``q_u . p_j + b_j`` (the argument of the sigmoid)."""
        self._check_index(user, item)
        q = self.user_representations(user)[0]
        p = np.asarray(self.item_features[item] @ self.item_vectors).ravel()
        b = float((self.item_features[item] @ self.item_biases)[0])
        if self.mode >= 1:
            b += float(self.dense[item] @ self.dense_bias_weights) + float(self.dense_intercept[0])
        if self.mode == 2:
            p = p + self.dense[item] @ self.dense_factor_projection
        return float(q @ p) + b

    def predict_proba(self, user: int, item: int) -> float:
        return float(expit(self.score(user, item)))

    def score_users(self, users) -> np.ndarray:
        """Raw scores of all items for each user in ``users``: ``(len(users), n_items)``."""
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexError("user index out of range")
        P, b = self.item_representations()
        return self.user_representations(users) @ P.T + b

    def score_items(self, user: int) -> np.ndarray:
        self._check_index(user)
        return self.score_users([user])[0]

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None, train: InteractionMatrix | None = None) -> None:
        arrays = dict(self.parameters())
        for prefix, m in (("user_features", self.user_features), ("item_features", self.item_features)):
            arrays[f"{prefix}.indptr"] = m.indptr
            arrays[f"{prefix}.indices"] = m.indices
            arrays[f"{prefix}.data"] = m.data
        arrays["dense"] = self.dense
        if train is not None:
            arrays["train.indptr"] = train.indptr
            arrays["train.indices"] = train.indices
        info = {
            "d": self.d,
            "metadata": self.metadata,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_user_features": int(self.user_features.shape[1]),
            "n_item_features": int(self.item_features.shape[1]),
            **(meta or {}),
        }
        save_checkpoint(path, MODEL_FORMAT, info, arrays)

    @classmethod
    def load(cls, path: str | Path) -> tuple["FactorizationModel", dict, InteractionMatrix | None]:
        """Returns ``(model, meta, train_interactions_or_None)``."""
        meta, arrays = load_checkpoint(path, MODEL_FORMAT)
        model = object.__new__(cls)
        model.n_users, model.n_items, model.d = meta["n_users"], meta["n_items"], meta["d"]
        model.metadata = meta["metadata"]
        model.user_features = sp.csr_matrix(
            (arrays["user_features.data"], arrays["user_features.indices"], arrays["user_features.indptr"]),
            shape=(meta["n_users"], meta["n_user_features"]),
        )
        model.item_features = sp.csr_matrix(
            (arrays["item_features.data"], arrays["item_features.indices"], arrays["item_features.indptr"]),
            shape=(meta["n_items"], meta["n_item_features"]),
        )
        model.dense = arrays["dense"]
        for name in ("user_vectors", "item_vectors", "item_biases", "dense_bias_weights",
                     "dense_intercept", "dense_factor_projection"):
            setattr(model, name, arrays[name])
        model.accumulators = {name: np.ones_like(v) for name, v in model.parameters().items()}
        train = None
        if "train.indptr" in arrays:
            train = InteractionMatrix(model.n_users, model.n_items, arrays["train.indptr"], arrays["train.indices"])
        return model, meta, train


def identity_user_features(n_users: int) -> sp.csr_matrix:
    return sp.identity(n_users, dtype=np.float64, format="csr")
