from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from temcgl.graph import (
    TEST,
    TRAIN,
    VALID,
    Graph,
    build_graph,
    generate_sbm,
    homophily_ratio,
    induced_subgraph,
    l_hop_neighborhood,
    load_edge_list,
    load_graph_files,
    normalize_adjacency,
    save_graph_files,
)

from helpers import (
    ball_oracle,
    dense_adjacency,
    dense_normalized,
    path_edges,
    random_edges,
    star_edges,
)


def test_build_graph_canonicalizes_edges():
    # duplicates, reversed pairs and self loops all collapse to one clean CSR
    edges = np.array([[1, 0], [0, 1], [2, 2], [1, 3], [3, 1]])
    g = build_graph(4, edges)
    assert g.indptr.tolist() == [0, 1, 3, 3, 4]
    assert g.indices.tolist() == [1, 0, 3, 1]
    assert g.num_edges == 2
    assert g.indptr.dtype == np.int64 and g.indices.dtype == np.int64


def test_build_graph_defaults():
    g = build_graph(3, path_edges(3))
    assert g.features.shape == (3, 1)
    assert g.features.dtype == np.float64
    assert g.labels.tolist() == [0, 0, 0]
    assert np.all(g.split == TRAIN)
    assert g.num_classes == 1
    assert g.neighbors(1).tolist() == [0, 2]


def test_graph_rejects_malformed_arrays():
    g = build_graph(3, path_edges(3))
    # asymmetric structure: edge 0->1 without its mirror
    with pytest.raises(ValueError):
        Graph(
            num_nodes=2,
            indptr=np.array([0, 1, 1], dtype=np.int64),
            indices=np.array([1], dtype=np.int64),
            features=np.zeros((2, 1)),
            labels=np.zeros(2, dtype=np.int64),
            split=np.zeros(2, dtype=np.int8),
        )
    with pytest.raises(ValueError):
        build_graph(3, path_edges(3), features=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        build_graph(3, path_edges(3), labels=np.array([0, -1, 0]))
    with pytest.raises(ValueError):
        build_graph(3, path_edges(3), split=np.array([0, 1, 7]))
    with pytest.raises(ValueError):
        build_graph(2, np.array([[0, 5]]))
    assert g.num_nodes == 3  # the good one was untouched


def test_split_nodes():
    g = build_graph(4, path_edges(4), split=np.array([0, 1, 2, 0]))
    assert g.split_nodes(TRAIN).tolist() == [0, 3]
    assert g.split_nodes(VALID).tolist() == [1]
    assert g.split_nodes(TEST).tolist() == [2]


# ---------------------------------------------------------------------------
# symmetric normalisation
# ---------------------------------------------------------------------------


def test_normalize_path_hand_values():
    g = build_graph(3, path_edges(3))
    adj = normalize_adjacency(g, self_loops=False)
    dense = adj.to_scipy().toarray()
    s = 1.0 / np.sqrt(2.0)
    expect = np.array([[0, s, 0], [s, 0, s], [0, s, 0]])
    np.testing.assert_allclose(dense, expect, atol=1e-15)

    withloops = normalize_adjacency(g, self_loops=True).to_scipy().toarray()
    expect2 = np.array(
        [
            [1 / 2, 1 / np.sqrt(6), 0],
            [1 / np.sqrt(6), 1 / 3, 1 / np.sqrt(6)],
            [0, 1 / np.sqrt(6), 1 / 2],
        ]
    )
    np.testing.assert_allclose(withloops, expect2, atol=1e-15)


def test_normalize_matches_dense_oracle():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n = int(rng.integers(2, 40))
        edges = random_edges(n, 0.2, rng)
        g = build_graph(n, edges)
        for loops in (False, True):
            adj = normalize_adjacency(g, self_loops=loops)
            oracle = dense_normalized(dense_adjacency(n, edges), loops)
            np.testing.assert_allclose(adj.to_scipy().toarray(), oracle, atol=1e-14)
            # stored values are exactly 1/sqrt(d_u d_v) for recorded degrees
            for u in range(n):
                for k in range(adj.indptr[u], adj.indptr[u + 1]):
                    v = adj.indices[k]
                    assert adj.values[k] == pytest.approx(
                        1.0 / np.sqrt(adj.degrees[u] * adj.degrees[v]), abs=1e-15
                    )


def test_isolated_node_gets_zero_row():
    g = build_graph(3, np.array([[0, 1]]))
    adj = normalize_adjacency(g, self_loops=False)
    dense = adj.to_scipy().toarray()
    assert np.all(dense[2] == 0.0) and np.all(dense[:, 2] == 0.0)
    assert np.all(np.isfinite(dense))
    out = adj.spmm(np.ones((3, 2)))
    assert np.all(out[2] == 0.0)


def test_spmm_and_restrict_match_dense():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(4, 30))
        edges = random_edges(n, 0.25, rng)
        g = build_graph(n, edges)
        adj = normalize_adjacency(g, self_loops=True)
        dense = adj.to_scipy().toarray()
        x = rng.standard_normal((n, 3))
        np.testing.assert_allclose(adj.spmm(x), dense @ x, atol=1e-12)

        keep = np.sort(rng.choice(n, size=max(1, n // 2), replace=False))
        sub = adj.restrict(keep)
        # restriction copies operator values; it must NOT renormalise
        np.testing.assert_array_equal(sub.to_scipy().toarray(), dense[np.ix_(keep, keep)])


def test_restrict_requires_sorted_unique_ids():
    g = build_graph(4, path_edges(4))
    adj = normalize_adjacency(g, self_loops=False)
    with pytest.raises(ValueError):
        adj.restrict(np.array([2, 1]))
    with pytest.raises(ValueError):
        adj.restrict(np.array([1, 1, 2]))


# ---------------------------------------------------------------------------
# neighbourhoods
# ---------------------------------------------------------------------------


def test_l_hop_neighborhood_star():
    g = build_graph(8, star_edges(7))
    assert l_hop_neighborhood(g, 0, 1).tolist() == list(range(8))
    assert l_hop_neighborhood(g, 3, 0).tolist() == [3]
    assert l_hop_neighborhood(g, 3, 1).tolist() == [0, 3]
    assert l_hop_neighborhood(g, 3, 2).tolist() == list(range(8))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), hops=st.integers(0, 3))
def test_l_hop_neighborhood_matches_set_bfs(seed: int, hops: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    edges = random_edges(n, 0.15, rng)
    g = build_graph(n, edges)
    v = int(rng.integers(0, n))
    got = l_hop_neighborhood(g, v, hops)
    want = sorted(ball_oracle(n, edges, [v], hops))
    assert got.tolist() == want
    if hops:  # balls are monotone in the radius
        prev = set(l_hop_neighborhood(g, v, hops - 1).tolist())
        assert prev <= set(got.tolist())


# ---------------------------------------------------------------------------
# homophily
# ---------------------------------------------------------------------------


def test_homophily_triangle():
    edges = np.array([[0, 1], [0, 2], [1, 2]])
    g = build_graph(3, edges, labels=np.array([0, 0, 1]))
    assert homophily_ratio(g) == pytest.approx(1.0 / 3.0)


def test_homophily_bounds_and_extremes():
    g_same = build_graph(3, path_edges(3), labels=np.array([1, 1, 1]))
    assert homophily_ratio(g_same) == 1.0
    g_diff = build_graph(2, np.array([[0, 1]]), labels=np.array([0, 1]))
    assert homophily_ratio(g_diff) == 0.0
    with pytest.raises(ValueError):
        homophily_ratio(build_graph(3, np.empty((0, 2), dtype=np.int64)))


def test_homophily_matches_edge_count_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(3, 30))
        edges = random_edges(n, 0.3, rng)
        if len(edges) == 0:
            continue
        labels = rng.integers(0, 3, size=n)
        g = build_graph(n, edges, labels=labels)
        same = sum(1 for u, v in edges if labels[u] == labels[v])
        assert homophily_ratio(g) == pytest.approx(same / len(edges))


# ---------------------------------------------------------------------------
# induced subgraphs
# ---------------------------------------------------------------------------


def test_induced_subgraph_slices_everything():
    g = build_graph(
        4,
        path_edges(4),
        features=np.arange(8, dtype=float).reshape(4, 2),
        labels=np.array([0, 1, 2, 3]),
        split=np.array([0, 1, 2, 0]),
    )
    sub = induced_subgraph(g, np.array([0, 1, 3]))
    assert sub.num_nodes == 3
    # only the 0-1 edge survives; node 3 (local 2) is isolated
    assert sub.indptr.tolist() == [0, 1, 2, 2]
    assert sub.indices.tolist() == [1, 0]
    np.testing.assert_array_equal(sub.features, g.features[[0, 1, 3]])
    assert sub.labels.tolist() == [0, 1, 3]
    assert sub.split.tolist() == [0, 1, 0]


def test_induced_subgraph_renormalizes_degrees():
    g = build_graph(3, path_edges(3))
    sub = induced_subgraph(g, np.array([0, 1]))
    dense = normalize_adjacency(sub, self_loops=False).to_scipy().toarray()
    # inside the subgraph node 1 has degree 1, so the weight is 1, not 1/sqrt(2)
    np.testing.assert_allclose(dense, np.array([[0.0, 1.0], [1.0, 0.0]]), atol=1e-15)


# ---------------------------------------------------------------------------
# stochastic block model generator
# ---------------------------------------------------------------------------


def test_sbm_shapes_labels_and_determinism():
    sizes = (30, 20, 10)
    a = generate_sbm(sizes, p_in=0.3, p_out=0.02, feature_dim=5, feature_shift=2.0, seed=9)
    b = generate_sbm(sizes, p_in=0.3, p_out=0.02, feature_dim=5, feature_shift=2.0, seed=9)
    c = generate_sbm(sizes, p_in=0.3, p_out=0.02, feature_dim=5, feature_shift=2.0, seed=10)
    assert a.num_nodes == 60
    assert a.labels.tolist() == [0] * 30 + [1] * 20 + [2] * 10
    assert a.features.shape == (60, 5)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.split, b.split)
    assert not np.array_equal(a.features, c.features)


def test_sbm_block_structure_dominates():
    g = generate_sbm((60, 60, 60), p_in=0.4, p_out=0.01, feature_dim=4, feature_shift=1.0, seed=1)
    assert homophily_ratio(g) > 0.8


def test_sbm_split_counts_per_class():
    g = generate_sbm((100, 10, 3), p_in=0.2, p_out=0.05, feature_dim=3, feature_shift=1.0, seed=2)
    for cls, size in ((0, 100), (1, 10), (2, 3)):
        members = np.flatnonzero(g.labels == cls)
        n_tr = int(np.sum(g.split[members] == TRAIN))
        n_va = int(np.sum(g.split[members] == VALID))
        n_te = int(np.sum(g.split[members] == TEST))
        assert n_tr == max(1, (6 * size) // 10)
        assert n_va == (2 * size) // 10
        assert n_tr + n_va + n_te == size


def test_sbm_feature_means_are_separated():
    shift = 3.0
    g = generate_sbm((200, 200), p_in=0.05, p_out=0.01, feature_dim=6, feature_shift=shift, seed=4)
    m0 = g.features[g.labels == 0].mean(axis=0)
    m1 = g.features[g.labels == 1].mean(axis=0)
    # empirical class means sit near the planted ones, `shift` apart
    assert np.linalg.norm(m0 - m1) == pytest.approx(shift, rel=0.15)


def test_sbm_rejects_bad_params():
    with pytest.raises(ValueError):
        generate_sbm((), p_in=0.1, p_out=0.1, feature_dim=2, feature_shift=1.0, seed=0)
    with pytest.raises(ValueError):
        generate_sbm((5, 5), p_in=1.5, p_out=0.1, feature_dim=2, feature_shift=1.0, seed=0)
    with pytest.raises(ValueError):
        generate_sbm((5, 0), p_in=0.5, p_out=0.1, feature_dim=2, feature_shift=1.0, seed=0)


# ---------------------------------------------------------------------------
# text file formats
# ---------------------------------------------------------------------------


def test_graph_files_round_trip(tmp_path):
    g = generate_sbm((12, 9), p_in=0.5, p_out=0.1, feature_dim=3, feature_shift=1.5, seed=5)
    paths = save_graph_files(g, tmp_path)
    back = load_graph_files(paths["edges"], paths["features"], paths["labels"], paths["split"])
    np.testing.assert_array_equal(back.indptr, g.indptr)
    np.testing.assert_array_equal(back.indices, g.indices)
    np.testing.assert_allclose(back.features, g.features, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(back.labels, g.labels)
    np.testing.assert_array_equal(back.split, g.split)


def test_edge_list_accepts_comments_and_blank_lines(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("# a comment\n0 1\n\n2 1\n")
    edges = load_edge_list(p)
    assert edges.tolist() == [[0, 1], [2, 1]]


def test_loaders_reject_malformed_inputs(tmp_path):
    feats = tmp_path / "features.txt"
    labels = tmp_path / "labels.txt"
    split = tmp_path / "split.txt"
    edges = tmp_path / "edges.txt"
    edges.write_text("0 1\n")
    feats.write_text("0.5 1.0\n1.5\n")  # ragged row
    labels.write_text("0\n1\n")
    split.write_text("train\nvalid\n")
    with pytest.raises(ValueError):
        load_graph_files(edges, feats, labels, split)

    feats.write_text("0.5 1.0\n1.5 2.0\n")
    split.write_text("train\nnope\n")
    with pytest.raises(ValueError):
        load_graph_files(edges, feats, labels, split)

    split.write_text("train\nvalid\n")
    labels.write_text("0\n1\n2\n")  # length mismatch vs features
    with pytest.raises(ValueError):
        load_graph_files(edges, feats, labels, split)

    labels.write_text("0\n1\n")
    edges.write_text("0 9\n")  # node id out of range
    with pytest.raises(ValueError):
        load_graph_files(edges, feats, labels, split)
