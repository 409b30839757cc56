import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrec.graph import (
    SimilarityGraph,
    cosine_similarity,
    jaccard_similarity,
    knn_sparsify,
    laplacian,
    regularizer_value,
    row_normalize,
    similarity_graph,
    write_edge_list,
)

from conftest import as_interactions, dense_laplacian, pairwise_smoothness, random_graph_matrix, random_sparse_X


def brute_cosine(V):
    n = V.shape[0]
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ni, nj = math.sqrt(sum(v * v for v in V[i])), math.sqrt(sum(v * v for v in V[j]))
            if i != j and ni > 0 and nj > 0:
                S[i, j] = sum(a * b for a, b in zip(V[i], V[j])) / (ni * nj)
    return S


def brute_jaccard(V):
    sets = [set(np.flatnonzero(row).tolist()) for row in V]
    n = len(sets)
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            union = sets[i] | sets[j]
            if i != j and union:
                S[i, j] = len(sets[i] & sets[j]) / len(union)
    return S


def graph(S, side="items"):
    return SimilarityGraph(side, sp.csr_matrix(np.asarray(S, dtype=float)), "cosine")


def edges(G):
    U = sp.triu(G.adjacency, 1).tocoo()
    return set(zip(U.row.tolist(), U.col.tolist()))


def check_graph_invariants(G):
    A = G.adjacency.toarray()
    np.testing.assert_array_equal(A, A.T)
    assert np.all(np.diag(A) == 0)
    assert A.min() >= 0 and A.max() <= 1


class TestCosine:
    def test_half(self):
        # item columns (1,1,0) and (1,0,1)
        X = as_interactions(np.array([[1, 1], [1, 0], [0, 1]]))
        S = cosine_similarity(X, "items").adjacency.toarray()
        assert S[0, 1] == pytest.approx(0.5, abs=1e-15)

    def test_identical_and_orthogonal(self):
        X = as_interactions(np.array([[2, 2, 0], [1, 1, 0], [0, 0, 3]]))
        S = cosine_similarity(X, "items").adjacency.toarray()
        assert S[0, 1] == pytest.approx(1.0)
        assert S[0, 2] == 0 and S[1, 2] == 0

    def test_zero_vector_node(self):
        X = as_interactions(np.array([[1, 0, 1], [1, 0, 0]]))
        S = cosine_similarity(X, "items").adjacency.toarray()
        assert not S[1].any() and not S[:, 1].any()

    @pytest.mark.parametrize("side", ["users", "items"])
    def test_matches_brute_force(self, rng, side):
        X = random_sparse_X(rng, 7, 9, density=0.4)
        G = cosine_similarity(as_interactions(X), side)
        V = X if side == "users" else X.T
        np.testing.assert_allclose(G.adjacency.toarray(), brute_cosine(V), atol=1e-12)
        check_graph_invariants(G)
        assert G.side == side and G.metric == "cosine" and G.k is None


class TestJaccard:
    def test_one_third(self):
        # user supports {1,2} and {1,3}
        X = as_interactions(np.array([[0, 1, 1, 0], [0, 1, 0, 1]]))
        S = jaccard_similarity(X, "users").adjacency.toarray()
        assert S[0, 1] == pytest.approx(1 / 3)

    def test_identical_and_disjoint(self):
        X = as_interactions(np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]]))
        S = jaccard_similarity(X, "users").adjacency.toarray()
        assert S[0, 1] == 1.0
        assert S[0, 2] == 0.0

    def test_warns_on_ratings(self):
        X = as_interactions(np.array([[3, 1], [0, 2]]))
        with pytest.warns(UserWarning, match="binarizing"):
            jaccard_similarity(X, "items")

    @pytest.mark.parametrize("side", ["users", "items"])
    def test_matches_brute_force(self, rng, side):
        X = (random_sparse_X(rng, 8, 6, density=0.5) > 0).astype(float)
        G = jaccard_similarity(as_interactions(X), side)
        V = X if side == "users" else X.T
        np.testing.assert_allclose(G.adjacency.toarray(), brute_jaccard(V), atol=1e-15)
        check_graph_invariants(G)


def brute_knn_edges(S, k):
    n = S.shape[0]
    keep = set()
    for i in range(n):
        cand = [(-S[i, j], j) for j in range(n) if j != i and S[i, j] > 0]
        for _, j in sorted(cand)[:k]:
            keep.add((min(i, j), max(i, j)))
    return keep


class TestKnn:
    def test_three_node_example(self):
        S = np.array([[0, 0.9, 0.1], [0.9, 0, 0.5], [0.1, 0.5, 0]])
        G = knn_sparsify(graph(S), 1)
        assert edges(G) == {(0, 1), (1, 2)}
        assert G.k == 1
        check_graph_invariants(G)

    def test_full_k_unchanged(self, rng):
        S = random_graph_matrix(rng, 6, density=1.0)
        G = knn_sparsify(graph(S), 5)
        np.testing.assert_array_equal(G.adjacency.toarray(), S)

    def test_ties_go_to_lower_index(self):
        S = np.array([[0, 0.5, 0.5, 0.5], [0.5, 0, 0, 0], [0.5, 0, 0, 0], [0.5, 0, 0, 0]])
        # node 0 keeps node 1 only; nodes 2 and 3 keep node 0 -> union restores all edges
        G = knn_sparsify(graph(S), 1)
        assert edges(G) == {(0, 1), (0, 2), (0, 3)}
        S2 = np.array([[0, 0.5, 0.5], [0.5, 0, 0.9], [0.5, 0.9, 0]])
        # node 0 ties between 1 and 2 and keeps 1; nodes 1 and 2 keep each other
        assert edges(knn_sparsify(graph(S2), 1)) == {(0, 1), (1, 2)}

    @pytest.mark.parametrize("k", [0, 6, 10])
    def test_k_out_of_range(self, rng, k):
        with pytest.raises(ValueError):
            knn_sparsify(graph(random_graph_matrix(rng, 6)), k)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 9), st.integers(0, 2**32 - 1), st.data())
    def test_against_enumeration_and_monotone(self, n, seed, data):
        rng = np.random.default_rng(seed)
        # coarse weights make ties common
        S = np.round(random_graph_matrix(rng, n, density=0.7) * 4) / 4
        k1 = data.draw(st.integers(1, n - 1))
        k2 = data.draw(st.integers(k1, n - 1))
        G1, G2 = knn_sparsify(graph(S), k1), knn_sparsify(graph(S), k2)
        assert edges(G1) == brute_knn_edges(S, k1)
        assert edges(G1) <= edges(G2)
        check_graph_invariants(G1)


class TestLaplacian:
    def test_empty_graph(self):
        L = laplacian(graph(np.zeros((3, 3))), cache_spectrum=True)
        assert not L.matrix.toarray().any()
        np.testing.assert_array_equal(L.eigenvalues, 0)

    def test_two_nodes(self):
        w = 0.3
        L = laplacian(graph([[0, w], [w, 0]]), cache_spectrum=True)
        np.testing.assert_allclose(L.matrix.toarray(), [[w, -w], [-w, w]])
        np.testing.assert_allclose(L.eigenvalues, [0, 2 * w], atol=1e-15)
        np.testing.assert_allclose(L.degrees, [w, w])

    def test_invariants(self, rng):
        S = random_graph_matrix(rng, 12)
        L = laplacian(graph(S), cache_spectrum=True)
        M = L.matrix.toarray()
        np.testing.assert_array_equal(M, M.T)
        np.testing.assert_allclose(M.sum(axis=1), 0, atol=1e-10 * np.abs(M).max())
        np.testing.assert_allclose(M, dense_laplacian(S), atol=1e-15)
        assert L.eigenvalues.min() >= 0
        Q = L.eigenvectors
        np.testing.assert_allclose(Q.T @ Q, np.eye(12), atol=1e-12)
        rec = Q @ np.diag(L.eigenvalues) @ Q.T
        assert np.linalg.norm(rec - M) <= 1e-8 * np.linalg.norm(M)

    def test_lazy_spectrum(self, rng):
        L = laplacian(graph(random_graph_matrix(rng, 4)))
        assert not L.has_spectrum
        L2 = L.with_spectrum()
        assert L2.has_spectrum and L2.with_spectrum() is L2

    def test_spectrum_json(self):
        L = laplacian(graph([[0, 0.5], [0.5, 0]]))
        d = json.loads(L.spectrum_json())
        assert d["n_nodes"] == 2
        np.testing.assert_allclose(d["eigenvalues"], [0, 1], atol=1e-15)


class TestRegularizer:
    def test_constant_rows_give_zero(self, rng):
        S = random_graph_matrix(rng, 5)
        Y = np.tile(rng.random((4, 1)), (1, 5))
        assert regularizer_value(laplacian(graph(S)), Y, "items") == pytest.approx(0, abs=1e-12)

    def test_zero_laplacian(self, rng):
        assert regularizer_value(laplacian(graph(np.zeros((5, 5)))), rng.random((4, 5))) == 0

    @pytest.mark.parametrize("side", ["items", "users"])
    def test_trace_identity(self, rng, side):
        for _ in range(20):
            Y = rng.standard_normal((4, 5))
            n = 5 if side == "items" else 4
            S = random_graph_matrix(rng, n)
            got = regularizer_value(laplacian(graph(S, side)), Y, side)
            want = pairwise_smoothness(Y, S, side)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
            assert got >= -1e-12

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            regularizer_value(laplacian(graph(random_graph_matrix(rng, 5))), rng.random((5, 4)), "items")


class TestBuilders:
    def test_similarity_graph_knn(self, rng):
        X = as_interactions(random_sparse_X(rng, 10, 8, density=0.5))
        G = similarity_graph(X, "items", "cosine", k=2)
        assert G.k == 2
        full = similarity_graph(X, "items", "cosine")
        assert edges(G) <= edges(full)

    def test_unknown_metric(self, rng):
        with pytest.raises(ValueError, match="pearson"):
            similarity_graph(as_interactions(random_sparse_X(rng, 3, 3)), "items", "pearson")

    def test_row_normalize(self, rng):
        G = row_normalize(graph(random_graph_matrix(rng, 6, density=1.0)))
        check_graph_invariants(G)
        assert G.normalized

    def test_edge_list(self, tmp_path):
        S = np.array([[0, 0.9, 0.1], [0.9, 0, 0], [0.1, 0, 0]])
        write_edge_list(graph(S), tmp_path / "g.tsv")
        lines = (tmp_path / "g.tsv").read_text().splitlines()
        assert lines == ["0\t1\t0.90000000000000002", "0\t2\t0.10000000000000001"]
