"""Top-N ranking from score matrices, plus ItemKNN and popularity scorers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import InteractionMatrix
from .graph import SimilarityGraph, top_k_neighbors
from .solver import ReconstructedMatrix


@dataclass(frozen=True)
class RankedList:
    """Top-N items for one user as ``(item_index, score)`` pairs, best first."""

    user_index: int
    items: tuple[tuple[int, float], ...]

    @property
    def item_indices(self) -> list[int]:
        return [i for i, _ in self.items]

    def rank_of(self, item: int) -> int:
        """1-based position of ``item``, or 0 when absent."""
        for pos, (i, _) in enumerate(self.items, start=1):
            if i == item:
                return pos
        return 0

    def __len__(self):
        return len(self.items)


def _scores(Y) -> np.ndarray:
    if isinstance(Y, ReconstructedMatrix):
        return Y.Y
    return np.asarray(Y, dtype=np.float64)


def rank_row(scores: np.ndarray, exclude: np.ndarray, N: int) -> np.ndarray:
    """Indices of the N best scores not in ``exclude``; ties by ascending index."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    row = np.array(scores, dtype=np.float64)
    keep = np.ones(row.size, dtype=bool)
    keep[exclude] = False
    candidates = np.flatnonzero(keep)
    # stable sort on negated scores keeps ascending index order among ties
    order = np.argsort(-row[candidates], kind="stable")
    return candidates[order[:N]]


def top_n(Y, X_train: InteractionMatrix, user: int, N: int = 10) -> RankedList:
    """Rank the user's non-training items by score and keep the best N."""
    S = _scores(Y)
    if S.shape != X_train.shape:
        raise ValueError(f"score matrix shape {S.shape} does not match training matrix {X_train.shape}")
    if not 0 <= user < X_train.n_users:
        raise IndexError(f"user index {user} out of range [0, {X_train.n_users})")
    idx = rank_row(S[user], X_train.row_items(user), N)
    return RankedList(int(user), tuple((int(i), float(S[user, i])) for i in idx))


def top_n_lists(Y, X_train: InteractionMatrix, users: Iterable[int], N: int = 10) -> dict[int, RankedList]:
    return {int(u): top_n(Y, X_train, int(u), N) for u in users}


def itemknn_scores(X_train: InteractionMatrix, S_items: SimilarityGraph, k: int) -> np.ndarray:
    """ItemKNN scores ``score(u, j) = sum_{t in topk(j)} s_jt * x_ut``.

    ``topk(j)`` are the k items most similar to j (ties to the lower index).
    """
    n = X_train.n_items
    if S_items.side != "items" or S_items.n_nodes != n:
        raise ValueError("S_items must be an item graph over the training matrix columns")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}, got {k}")
    W = top_k_neighbors(S_items.adjacency, k)
    return np.asarray((X_train.matrix @ W.T).toarray())


def popularity_scores(X_train: InteractionMatrix) -> np.ndarray:
    """Every user gets the item's training interaction count as its score."""
    counts = np.asarray((X_train.matrix != 0).sum(axis=0), dtype=np.float64).ravel()
    return np.broadcast_to(counts, X_train.shape)


def write_recommendations(lists: Iterable[RankedList], X: InteractionMatrix, path: str | Path) -> None:
    """TSV of ``user_id<TAB>rank<TAB>item_id<TAB>score`` with external ids."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rl in lists:
            uid = X.user_ids[rl.user_index]
            for rank, (item, score) in enumerate(rl.items, start=1):
                fh.write(f"{uid}\t{rank}\t{X.item_ids[item]}\t{score:.17g}\n")


def raw_scores(X_train: InteractionMatrix) -> np.ndarray:
    return X_train.toarray()

