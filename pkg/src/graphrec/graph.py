"""User and item similarity graphs and their Laplacians."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .data import InteractionMatrix, binarize
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

SIDES = ("users", "items")
METRICS = ("cosine", "jaccard")


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Symmetric, nonnegative adjacency over the users or items of a matrix.

    ``adjacency`` is a CSR matrix with zero diagonal and entries in [0, 1].
    ``k`` is the neighborhood size used for sparsification, or None for the
    fully connected graph.
    """

    side: str
    adjacency: sp.csr_matrix
    metric: str
    k: int | None = None
    normalized: bool = False

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return sp.triu(self.adjacency, k=1).nnz


def _check_side(side):
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def _vectors(X: InteractionMatrix | sp.spmatrix, side: str) -> sp.csr_matrix:
    """Node vectors as rows: users are rows of X, items are columns."""
    _check_side(side)
    M = X.matrix if isinstance(X, InteractionMatrix) else sp.csr_matrix(X)
    M = sp.csr_matrix(M, dtype=np.float64)
    return M if side == "users" else M.T.tocsr()


def _finish(S: sp.spmatrix) -> sp.csr_matrix:
    """Zero the diagonal, clip rounding overshoot and force exact symmetry."""
    S = sp.csr_matrix(S)
    S.setdiag(0.0)
    S.eliminate_zeros()
    S.data = np.minimum(S.data, 1.0)
    S = ((S + S.T) * 0.5).tocsr()
    S.sort_indices()
    return S


def cosine_similarity(X: InteractionMatrix, side: str = "items") -> SimilarityGraph:
    """Cosine similarity between the rows (users) or columns (items) of X.

    Nodes with an all-zero vector get similarity 0 to every other node.
    """
    V = _vectors(X, side)
    norms = np.sqrt(np.asarray(V.multiply(V).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    Vn = sp.diags(inv) @ V
    S = Vn @ Vn.T
    if S.nnz and S.data.min() < -1e-12:
        raise DataError("negative cosine similarity; ratings must be nonnegative")
    S.data = np.maximum(S.data, 0.0)
    return SimilarityGraph(side, _finish(S), "cosine")


def jaccard_similarity(X: InteractionMatrix, side: str = "items") -> SimilarityGraph:
    """Jaccard coefficient between interaction supports.

    Non-binary input is binarized first (with a warning).
    """
    if isinstance(X, InteractionMatrix):
        if X.rating_scale.kind != "implicit" and X.nnz and np.any(X.matrix.data != 1.0):
            warnings.warn("jaccard_similarity on non-binary ratings; binarizing", stacklevel=2)
        B = _vectors(binarize(X), side)
    else:
        B = _vectors(X, side)
        B.data = np.ones_like(B.data)
    sizes = np.asarray(B.sum(axis=1)).ravel()
    inter = (B @ B.T).tocoo()
    union = sizes[inter.row] + sizes[inter.col] - inter.data
    S = sp.csr_matrix((inter.data / union, (inter.row, inter.col)), shape=inter.shape)
    return SimilarityGraph(side, _finish(S), "jaccard")


def similarity_graph(
    X: InteractionMatrix,
    side: str,
    metric: str = "cosine",
    k: int | None = None,
    normalize: bool = False,
) -> SimilarityGraph:
    """Build a similarity graph, optionally normalized and kNN-sparsified."""
    if metric == "cosine":
        S = cosine_similarity(X, side)
    elif metric == "jaccard":
        S = jaccard_similarity(X, side)
    else:
        raise ValueError(f"unknown similarity metric {metric!r}; expected one of {METRICS}")
    if normalize:
        S = row_normalize(S)
    if k is not None and k < S.n_nodes - 1:
        S = knn_sparsify(S, k)
    return S


def row_normalize(S: SimilarityGraph) -> SimilarityGraph:
    """Scale each row to sum 1, then symmetrize by averaging with the transpose."""
    A = S.adjacency
    rs = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)
    return replace(S, adjacency=_finish(sp.diags(inv) @ A), normalized=True)


def top_k_neighbors(A: sp.csr_matrix, k: int) -> sp.csr_matrix:
    """Per row, keep the ``k`` largest entries; ties go to the lower column index.

    The result is generally not symmetric.
    """
    A = sp.csr_matrix(A)
    A.sort_indices()
    rows, cols, vals = [], [], []
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        idx, val = A.indices[lo:hi], A.data[lo:hi]
        mask = val > 0
        idx, val = idx[mask], val[mask]
        if idx.size > k:
            order = np.lexsort((idx, -val))[:k]
            idx, val = idx[order], val[order]
        rows.append(np.full(idx.size, i))
        cols.append(idx)
        vals.append(val)
    rows, cols, vals = (np.concatenate(a) if a else np.empty(0) for a in (rows, cols, vals))
    out = sp.csr_matrix((vals, (rows.astype(np.int64), cols.astype(np.int64))), shape=A.shape)
    out.sort_indices()
    return out


def knn_sparsify(S: SimilarityGraph, k: int) -> SimilarityGraph:
    """Keep each node's k strongest edges and symmetrize by union."""
    if not 1 <= k < S.n_nodes:
        raise ValueError(f"k must satisfy 1 <= k < {S.n_nodes}, got {k}")
    K = top_k_neighbors(S.adjacency, k)
    keep = (K != 0).astype(np.int8)
    keep = keep + keep.T
    A = S.adjacency.multiply(keep > 0).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return replace(S, adjacency=A, k=k)


@dataclass(frozen=True, eq=False)
class Laplacian:
    """Graph Laplacian ``L = D - S`` with an optional cached spectrum.

    When present, ``eigenvalues`` are clipped at zero (the Laplacian is
    positive semidefinite) and ``eigenvectors`` are orthonormal columns.
    """

    graph: SimilarityGraph
    degrees: np.ndarray
    matrix: sp.csr_matrix
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def side(self) -> str:
        return self.graph.side

    @property
    def has_spectrum(self) -> bool:
        return self.eigenvalues is not None

    def with_spectrum(self) -> Laplacian:
        """Return a copy carrying the full symmetric eigendecomposition."""
        if self.has_spectrum:
            return self
        L = self.matrix.toarray()
        try:
            w, Q = scipy.linalg.eigh(L, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"eigendecomposition of {self.n_nodes}x{self.n_nodes} Laplacian failed: {exc}") from exc
        scale = max(1.0, float(np.abs(w).max()) if w.size else 0.0)
        if w.size and w.min() < -1e-8 * scale:
            raise NumericalError(f"Laplacian has negative eigenvalue {w.min():g}")
        return replace(self, eigenvalues=np.maximum(w, 0.0), eigenvectors=Q)

    def spectrum_json(self) -> str:
        """Eigenvalues and degrees as JSON, for debugging."""
        lap = self.with_spectrum()
        return json.dumps(
            {
                "side": self.side,
                "n_nodes": self.n_nodes,
                "metric": self.graph.metric,
                "k": self.graph.k,
                "degrees": self.degrees.tolist(),
                "eigenvalues": lap.eigenvalues.tolist(),
            }
        )


def laplacian(S: SimilarityGraph, cache_spectrum: bool = False) -> Laplacian:
    d = np.asarray(S.adjacency.sum(axis=1)).ravel()
    L = (sp.diags(d) - S.adjacency).tocsr()
    L.sort_indices()
    lap = Laplacian(S, d, L)
    return lap.with_spectrum() if cache_spectrum else lap


def regularizer_value(L: Laplacian | sp.spmatrix | np.ndarray, Y: np.ndarray, side: str = "items") -> float:
    """Graph smoothness penalty of Y.

    ``Tr(Y L Y^T)`` for an item graph (columns of Y) and ``Tr(Y^T L Y)`` for a
    user graph (rows of Y).
    """
    _check_side(side)
    M = L.matrix if isinstance(L, Laplacian) else L
    Y = np.asarray(Y, dtype=np.float64)
    axis = 1 if side == "items" else 0
    if M.shape != (Y.shape[axis], Y.shape[axis]):
        raise ValueError(f"{side} Laplacian of shape {M.shape} does not conform with Y of shape {Y.shape}")
    if side == "items":
        return float(np.sum(np.asarray(Y @ M) * Y))
    return float(np.sum(np.asarray(M @ Y) * Y))


def write_edge_list(S: SimilarityGraph, path: str | Path) -> None:
    """Write ``i<TAB>j<TAB>s_ij`` for i < j, sorted by (i, j)."""
    U = sp.triu(S.adjacency, k=1).tocoo()
    order = np.lexsort((U.col, U.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, c, v in zip(U.row[order], U.col[order], U.data[order]):
            fh.write(f"{r}\t{c}\t{v:.17g}\n")
