"""Interaction data: loading, binarization and leave-one-out folds.

Interaction files are plain triples, one per line::

    user<TAB>item<TAB>rating
    user<TAB>item              # implicit feedback, rating taken as 1

Comma- and whitespace-separated variants are accepted through ``format``.
Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

logger = logging.getLogger(__name__)

FORMATS = {"triples_tsv": "\t", "triples_csv": ",", "triples_ws": None}

RNG_ALGORITHM = "numpy.PCG64(SeedSequence([seed, fold]).generate_state(1, uint64))"


@dataclass(frozen=True)
class RatingScale:
    """Declared rating scale of a dataset.

    ``kind`` is ``"implicit"`` (every rating is 1) or ``"explicit"``. Explicit
    scales may carry bounds and a step; missing bounds mean "any positive value".
    """

    kind: str = "explicit"
    min: float | None = None
    max: float | None = None
    step: float | None = None

    def __post_init__(self):
        if self.kind not in ("implicit", "explicit"):
            raise DataError(f"unknown rating scale kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str | None) -> RatingScale | None:
        """Parse ``implicit``, ``explicit`` or ``explicit:min:max[:step]``.

        ``None``, ``""`` and ``"auto"`` return None, which lets the loader
        infer the scale from the number of columns.
        """
        if text is None or text in ("", "auto"):
            return None
        parts = text.split(":")
        if parts[0] == "implicit" and len(parts) == 1:
            return cls("implicit")
        if parts[0] == "explicit" and len(parts) in (1, 3, 4):
            nums = [float(p) for p in parts[1:]]
            return cls("explicit", *nums)
        raise DataError(f"cannot parse rating scale {text!r}")

    def __str__(self):
        if self.kind == "implicit" or self.min is None:
            return self.kind
        s = f"explicit:{self.min:g}:{self.max:g}"
        return s + (f":{self.step:g}" if self.step is not None else "")

    def contains(self, rating: float) -> bool:
        if not rating > 0 or not math.isfinite(rating):
            return False
        if self.kind == "implicit":
            return rating == 1.0
        if self.min is not None and not (self.min - 1e-9 <= rating <= self.max + 1e-9):
            return False
        if self.step is not None:
            k = (rating - (self.min or 0.0)) / self.step
            return abs(k - round(k)) < 1e-6
        return True


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Sparse m x n user-item matrix with external id maps.

    ``matrix`` is a canonical CSR matrix (sorted indices, no duplicates, no
    explicit zeros) whose data buffers are read-only. Row ``u`` belongs to
    ``user_ids[u]`` and column ``i`` to ``item_ids[i]``.
    """

    matrix: sp.csr_matrix
    user_ids: tuple
    item_ids: tuple
    rating_scale: RatingScale = field(default_factory=RatingScale)

    def __post_init__(self):
        X = self.matrix
        if X.shape != (len(self.user_ids), len(self.item_ids)):
            raise DataError(
                f"matrix shape {X.shape} does not match id maps "
                f"({len(self.user_ids)}, {len(self.item_ids)})"
            )
        if X.nnz and not np.all(X.data > 0):
            raise DataError("stored ratings must be positive")
        for arr in (X.data, X.indices, X.indptr):
            arr.flags.writeable = False

    @classmethod
    def from_triples(
        cls,
        users: Sequence[int],
        items: Sequence[int],
        ratings: Sequence[float],
        user_ids: Sequence,
        item_ids: Sequence,
        rating_scale: RatingScale | None = None,
    ) -> InteractionMatrix:
        """Build from dense index triples; duplicate pairs are rejected."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        m, n = len(user_ids), len(item_ids)
        if users.size and (users.min() < 0 or users.max() >= m or items.min() < 0 or items.max() >= n):
            raise DataError("interaction index out of range")
        coo = sp.coo_matrix((ratings, (users, items)), shape=(m, n))
        X = coo.tocsr()
        if X.nnz != users.size:
            raise DataError("duplicate (user, item) pair")
        X.sort_indices()
        return cls(X, tuple(user_ids), tuple(item_ids), rating_scale or RatingScale())

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def density(self) -> float:
        return self.nnz / (self.n_users * self.n_items)

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(users, items, ratings)`` in row-major order."""
        X = self.matrix
        users = np.repeat(np.arange(X.shape[0]), np.diff(X.indptr))
        return users, X.indices.astype(np.int64), X.data.copy()

    def row_items(self, user: int) -> np.ndarray:
        X = self.matrix
        return X.indices[X.indptr[user]:X.indptr[user + 1]]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def checksum(self) -> str:
        """SHA-256 over the id maps and the canonical CSR buffers."""
        h = hashlib.sha256()
        h.update(json.dumps([list(map(str, self.user_ids)), list(map(str, self.item_ids))]).encode())
        X = self.matrix
        for arr in (X.indptr.astype("<i8"), X.indices.astype("<i8"), X.data.astype("<f8")):
            h.update(arr.tobytes())
        return h.hexdigest()

    def stats(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "nnz": self.nnz,
            "density": self.density,
            "rating_scale": str(self.rating_scale),
            "mean_rating": float(self.matrix.data.mean()) if self.nnz else 0.0,
        }


def _split_line(line: str, sep: str | None) -> list[str]:
    return [f.strip() for f in line.split(sep)] if sep is not None else line.split()


def load_interactions(
    path: str | Path,
    format: str = "triples_tsv",
    scale: RatingScale | str | None = None,
) -> InteractionMatrix:
    """Read a triple file into an :class:`InteractionMatrix`.

    Dense indices are assigned in order of first appearance. Files without a
    rating column are implicit (rating 1). When ``scale`` is None the scale is
    inferred: implicit for two columns, unbounded explicit for three.

    Raises
    ------
    DataError
        On a malformed row, a rating outside the declared scale, a duplicate
        (user, item) pair or an empty file. Messages carry the line number.
    """
    path = Path(path)
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {sorted(FORMATS)}")
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if isinstance(scale, str):
        scale = RatingScale.parse(scale)
    sep = FORMATS[format]

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: dict[tuple[int, int], int] = {}
    users, items, ratings = [], [], []
    n_cols = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = _split_line(line, sep)
            if len(fields) not in (2, 3) or not all(fields):
                raise DataError(f"{path}:{lineno}: malformed row {line!r}")
            if n_cols is None:
                n_cols = len(fields)
                if scale is None:
                    scale = RatingScale("implicit" if n_cols == 2 else "explicit")
            elif len(fields) != n_cols:
                raise DataError(f"{path}:{lineno}: expected {n_cols} columns, got {len(fields)}")
            if n_cols == 3:
                try:
                    r = float(fields[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed rating {fields[2]!r}") from None
            else:
                r = 1.0
            if not scale.contains(r):
                raise DataError(f"{path}:{lineno}: rating {r:g} outside scale {scale}")
            u = user_index.setdefault(fields[0], len(user_index))
            i = item_index.setdefault(fields[1], len(item_index))
            prev = seen.setdefault((u, i), lineno)
            if prev != lineno:
                raise DataError(
                    f"{path}:{lineno}: duplicate pair ({fields[0]}, {fields[1]}), first seen on line {prev}"
                )
            users.append(u)
            items.append(i)
            ratings.append(r)

    if not users:
        raise DataError(f"{path}: no interactions")
    X = InteractionMatrix.from_triples(users, items, ratings, list(user_index), list(item_index), scale)
    logger.info("loaded %s: m=%d n=%d nnz=%d density=%.4f%%", path, X.n_users, X.n_items, X.nnz, 100 * X.density)
    return X


def write_triples(path: str | Path, users, items, ratings, user_ids, item_ids, implicit: bool = False) -> None:
    """Write triples with external ids, tab-separated, in the given order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i, r in zip(users, items, ratings):
            if implicit:
                fh.write(f"{user_ids[u]}\t{item_ids[i]}\n")
            else:
                fh.write(f"{user_ids[u]}\t{item_ids[i]}\t{float(r):.17g}\n")


def binarize(X: InteractionMatrix) -> InteractionMatrix:
    """Replace every stored rating by 1, keeping the sparsity pattern."""
    B = X.matrix.copy()
    B.data = np.ones_like(B.data)
    return InteractionMatrix(B, X.user_ids, X.item_ids, RatingScale("implicit"))


@dataclass(frozen=True, eq=False)
class FoldSplit:
    """One leave-one-out fold.

    The test set holds at most one entry per user, stored as three parallel
    arrays sorted by user. ``train`` shares the id maps and shape of the
    source matrix, so items only seen in the test set become empty columns.
    """

    fold_index: int
    train: InteractionMatrix
    test_users: np.ndarray
    test_items: np.ndarray
    test_ratings: np.ndarray
    rng_seed: int

    @property
    def n_test(self) -> int:
        return int(self.test_users.size)

    @property
    def test(self) -> list[tuple[int, int, float]]:
        return [(int(u), int(i), float(r)) for u, i, r in zip(self.test_users, self.test_items, self.test_ratings)]


def fold_seed(seed: int, fold_index: int) -> int:
    """Derive the per-fold generator seed from the experiment seed."""
    state = np.random.SeedSequence([seed, fold_index]).generate_state(1, np.uint64)
    return int(state[0])


def split_loo_folds(X: InteractionMatrix, n_folds: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Draw ``n_folds`` independent leave-one-out splits.

    In every fold each user with at least two interactions has one of them,
    chosen uniformly at random, moved to the test set. Users with a single
    interaction stay in the training set. Folds are drawn independently, so a
    user's test item may repeat across folds.
    """
    if n_folds < 1:
        raise DataError(f"n_folds must be >= 1, got {n_folds}")
    M = X.matrix
    counts = np.diff(M.indptr)
    if np.any(counts == 0):
        raise DataError("user with zero interactions")
    eligible = np.flatnonzero(counts >= 2)

    folds = []
    for k in range(n_folds):
        rs = fold_seed(seed, k)
        rng = np.random.Generator(np.random.PCG64(rs))
        draws = rng.random(X.n_users)
        pick = np.minimum((draws * counts).astype(np.int64), counts - 1)
        pos = M.indptr[eligible] + pick[eligible]

        keep = np.ones(M.nnz, dtype=bool)
        keep[pos] = False
        users = np.repeat(np.arange(X.n_users), counts)
        train = sp.csr_matrix((M.data[keep], (users[keep], M.indices[keep])), shape=M.shape)
        train.sort_indices()
        folds.append(
            FoldSplit(
                fold_index=k,
                train=InteractionMatrix(train, X.user_ids, X.item_ids, X.rating_scale),
                test_users=eligible.astype(np.int64),
                test_items=M.indices[pos].astype(np.int64),
                test_ratings=M.data[pos].copy(),
                rng_seed=rs,
            )
        )
    return folds


def write_folds(folds: Iterable[FoldSplit], out_dir: str | Path, seed: int, source_checksum: str) -> list[Path]:
    """Persist folds as ``fold<k>.{train,test}.tsv`` plus ``split.meta.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds = list(folds)
    written = []
    for f in folds:
        X = f.train
        implicit = X.rating_scale.kind == "implicit"
        p = out_dir / f"fold{f.fold_index}.train.tsv"
        write_triples(p, *X.triples(), X.user_ids, X.item_ids, implicit)
        q = out_dir / f"fold{f.fold_index}.test.tsv"
        write_triples(q, f.test_users, f.test_items, f.test_ratings, X.user_ids, X.item_ids, implicit)
        written += [p, q]
    meta = {
        "seed": seed,
        "n_folds": len(folds),
        "rng": RNG_ALGORITHM,
        "fold_seeds": [f.rng_seed for f in folds],
        "source_checksum": source_checksum,
    }
    meta_path = out_dir / "split.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written


def file_checksum(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_block_dataset(
    n_users: int = 200,
    n_items: int = 300,
    density: float = 0.01,
    n_blocks: int = 2,
    noise: float = 0.0,
    skew: float = 0.0,
    seed: int = 0,
) -> InteractionMatrix:
    """Generate an implicit dataset with community structure.

    Users and items are split into ``n_blocks`` contiguous communities. Each
    user interacts with ``round(density * n_items)`` items (at least 2), drawn
    without replacement from its own block with Zipf-like weights
    ``1 / rank**skew``; a ``noise`` fraction of draws come from other blocks.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    per_user = max(2, int(round(density * n_items)))
    user_block = np.arange(n_users) * n_blocks // n_users
    item_block = np.arange(n_items) * n_blocks // n_items
    # shuffle popularity ranks inside each block so popular items are not index-ordered
    weights = np.empty(n_items)
    for b in range(n_blocks):
        idx = np.flatnonzero(item_block == b)
        ranks = rng.permutation(idx.size) + 1
        weights[idx] = 1.0 / ranks**skew

    users, items = [], []
    for u in range(n_users):
        in_block = item_block == user_block[u]
        n_noise = rng.binomial(per_user, noise) if noise > 0 else 0
        chosen = []
        for mask, cnt in ((in_block, per_user - n_noise), (~in_block, n_noise)):
            if cnt == 0:
                continue
            idx = np.flatnonzero(mask)
            p = weights[idx] / weights[idx].sum()
            chosen.extend(rng.choice(idx, size=min(cnt, idx.size), replace=False, p=p))
        users.extend([u] * len(chosen))
        items.extend(chosen)
    return InteractionMatrix.from_triples(
        users,
        items,
        np.ones(len(users)),
        [f"u{u}" for u in range(n_users)],
        [f"i{i}" for i in range(n_items)],
        RatingScale("implicit"),
    )
