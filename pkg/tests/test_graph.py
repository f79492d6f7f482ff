import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpgraph.errors import DuplicateEdgeError, GraphFormatError, SelfLoopError
from pmpgraph.graph import (
    degree_histogram,
    full_batch,
    generate_sbm,
    graph_from_edges,
    load_graph,
    sample_neighborhood,
    sample_roots,
    save_graph,
)


def write_files(tmp_path, edges_text, n_rows, labels_text=None):
    e = tmp_path / "edges.tsv"
    f = tmp_path / "feats.csv"
    e.write_text(edges_text, encoding="utf-8")
    f.write_text("".join(f"{i}.0,1.5\n" for i in range(n_rows)), encoding="utf-8")
    lab = None
    if labels_text is not None:
        lab = tmp_path / "labels.csv"
        lab.write_text(labels_text, encoding="utf-8")
    return e, f, lab


def random_graph(rng, n, p, max_degree=None):
    edges = []
    deg = np.zeros(n, dtype=int)
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p and (max_degree is None or (deg[u] < max_degree and deg[v] < max_degree)):
                edges.append((u, v))
                deg[u] += 1
                deg[v] += 1
    return graph_from_edges(n, edges, rng.standard_normal((n, 3)))


class TestLoadGraph:
    def test_path_graph(self, tmp_path):
        e, f, _ = write_files(tmp_path, "0\t1\n1\t2\n", 3)
        g = load_graph(e, f)
        assert g.num_nodes == 3
        assert g.degrees.tolist() == [1, 2, 1]
        assert g.adjacency[1].tolist() == [0, 2]
        assert g.features.shape == (3, 2)

    def test_self_loop_rejected_with_line(self, tmp_path):
        e, f, _ = write_files(tmp_path, "0\t1\n0\t0\n", 3)
        with pytest.raises(SelfLoopError) as exc:
            load_graph(e, f)
        assert exc.value.line == 2

    def test_duplicate_after_canonical_ordering(self, tmp_path):
        e, f, _ = write_files(tmp_path, "0\t1\n1\t0\n", 3)
        with pytest.raises(DuplicateEdgeError) as exc:
            load_graph(e, f)
        assert exc.value.line == 2

    def test_id_beyond_feature_rows(self, tmp_path):
        e, f, _ = write_files(tmp_path, "0\t5\n", 3)
        with pytest.raises(GraphFormatError):
            load_graph(e, f)

    def test_non_numeric(self, tmp_path):
        e, f, _ = write_files(tmp_path, "0\tx\n", 3)
        with pytest.raises(GraphFormatError, match="non-numeric"):
            load_graph(e, f)
        e.write_text("0\t1\n", encoding="utf-8")
        f.write_text("1.0,abc\n2,3\n", encoding="utf-8")
        with pytest.raises(GraphFormatError, match="non-numeric"):
            load_graph(e, f)

    def test_labels_define_training_pool(self, tmp_path):
        e, f, lab = write_files(tmp_path, "0\t1\n", 3, "0,1\n2,0\n")
        g = load_graph(e, f, lab)
        assert g.labels.tolist() == [1, -1, 0]
        assert g.train_mask.tolist() == [0, 2]

    def test_round_trip(self, tmp_path):
        g = generate_sbm([4, 4], 0.8, 0.1, 3, 1.0, np.random.default_rng(0))
        paths = [tmp_path / n for n in ("e.tsv", "f.csv", "l.csv")]
        save_graph(g, *paths)
        h = load_graph(*paths)
        assert np.array_equal(h.edges(), g.edges())
        assert np.array_equal(h.features, g.features)
        assert np.array_equal(h.labels, g.labels)


class TestSampleNeighborhood:
    def test_fanin_capped(self):
        g = graph_from_edges(11, [(0, i) for i in range(1, 11)])
        b = sample_neighborhood(g, [0], 1, 3, np.random.default_rng(0))
        assert b.sampled_in_degree[0, 0] == 3
        srcs = b.nodes[b.layer_src[0]]
        assert len(set(srcs.tolist())) == 3
        assert all(g.has_edge(0, int(s)) for s in srcs)

    def test_low_degree_takes_all(self):
        g = graph_from_edges(3, [(0, 1), (0, 2)])
        b = sample_neighborhood(g, [0], 1, 3, np.random.default_rng(0))
        assert sorted(b.nodes[b.layer_src[0]].tolist()) == [1, 2]

    def test_deterministic(self):
        g = random_graph(np.random.default_rng(1), 40, 0.2)
        b1 = sample_neighborhood(g, [0, 5, 9], 2, 3, np.random.default_rng(7))
        b2 = sample_neighborhood(g, [0, 5, 9], 2, 3, np.random.default_rng(7))
        assert np.array_equal(b1.nodes, b2.nodes)
        for l in range(2):
            assert np.array_equal(b1.layer_src[l], b2.layer_src[l])
            assert np.array_equal(b1.layer_dst[l], b2.layer_dst[l])

    def test_unknown_root(self):
        g = graph_from_edges(3, [(0, 1)])
        with pytest.raises(ValueError, match="unknown root"):
            sample_neighborhood(g, [3], 1, 2, np.random.default_rng(0))

    def test_isolated_root(self):
        g = graph_from_edges(3, [(0, 1)])
        b = sample_neighborhood(g, [2], 2, 2, np.random.default_rng(0))
        assert b.nodes.tolist() == [2]
        assert all(s.size == 0 for s in b.layer_src)

    def test_layers_point_toward_roots(self):
        # path 0-1-2-3, root 0, two layers: layer 2 only feeds the root
        g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        b = sample_neighborhood(g, [0], 2, 5, np.random.default_rng(0))
        last = set(zip(b.nodes[b.layer_src[1]].tolist(), b.nodes[b.layer_dst[1]].tolist()))
        first = set(zip(b.nodes[b.layer_src[0]].tolist(), b.nodes[b.layer_dst[0]].tolist()))
        assert last == {(1, 0)}
        assert first == {(1, 0), (0, 1), (2, 1)}

    def test_sampling_is_uniform(self):
        g = graph_from_edges(6, [(0, i) for i in range(1, 6)])
        rng = np.random.default_rng(3)
        counts = np.zeros(6)
        trials = 6000
        for _ in range(trials):
            b = sample_neighborhood(g, [0], 1, 2, rng)
            counts[b.nodes[b.layer_src[0]]] += 1
        # each neighbor chosen with probability 2/5
        assert np.allclose(counts[1:] / trials, 0.4, atol=0.03)

    def test_roots_from_training_pool(self):
        g = generate_sbm([10, 10], 0.5, 0.1, 2, 1.0, np.random.default_rng(0)).with_train_mask(np.arange(0, 20, 2))
        roots = sample_roots(g, 5, np.random.default_rng(0))
        assert len(set(roots.tolist())) == 5
        assert set(roots.tolist()) <= set(range(0, 20, 2))
        with pytest.raises(ValueError):
            sample_roots(g, 11, np.random.default_rng(0))


def test_fanin_bound_and_restriction_over_random_samples():
    rng = np.random.default_rng(11)
    for trial in range(1000):
        if trial % 50 == 0:
            g = random_graph(rng, int(rng.integers(5, 30)), float(rng.uniform(0.05, 0.6)))
        fanin = int(rng.integers(1, 5))
        roots = rng.choice(g.num_nodes, size=int(rng.integers(1, min(4, g.num_nodes) + 1)), replace=False)
        b = sample_neighborhood(g, roots, int(rng.integers(1, 4)), fanin, rng)
        assert b.sampled_in_degree.max(initial=0) <= fanin
        for l in range(b.num_layers):
            for u, v in b.global_edges(l):
                assert g.has_edge(int(u), int(v))


class TestSbm:
    def test_disjoint_triangles(self):
        g = generate_sbm([3, 3], 1.0, 0.0, 2, 1.0, np.random.default_rng(0))
        assert g.labels.tolist() == [0, 0, 0, 1, 1, 1]
        assert g.edges().tolist() == [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]]
        assert g.train_mask.tolist() == list(range(6))

    def test_edgeless(self):
        g = generate_sbm([4, 5], 0.0, 0.0, 2, 1.0, np.random.default_rng(0))
        assert g.degrees.tolist() == [0] * 9

    def test_empty_blocks(self):
        with pytest.raises(ValueError):
            generate_sbm([], 0.5, 0.5, 2, 1.0, np.random.default_rng(0))

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            generate_sbm([2], 1.5, 0.5, 2, 1.0, np.random.default_rng(0))

    def test_intra_block_degree_matches_bernoulli_mean(self):
        expected = 49 * 0.3
        for seed in range(20):
            g = generate_sbm([50, 50], 0.3, 0.02, 2, 1.0, np.random.default_rng(seed))
            e = g.edges()
            same = g.labels[e[:, 0]] == g.labels[e[:, 1]]
            intra_degree = 2 * same.sum() / g.num_nodes
            assert abs(intra_degree - expected) < 3


class TestDegreeHistogram:
    def test_path(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)])
        h = degree_histogram(g, 50)
        assert h.size == 51
        assert h[1] == 2 and h[2] == 1 and h.sum() == 3

    def test_star_grouped_into_cap(self):
        g = graph_from_edges(61, [(0, i) for i in range(1, 61)])
        h = degree_histogram(g, 50)
        assert h[1] == 60 and h[50] == 1 and h.sum() == 61

    def test_cap_validation(self):
        with pytest.raises(ValueError):
            degree_histogram(graph_from_edges(2, []), 0)


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 25),
    p=st.floats(0.0, 1.0),
    cap=st.integers(1, 30),
    seed=st.integers(0, 2**32 - 1),
)
def test_histogram_conservation_and_symmetry(n, p, cap, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    assert degree_histogram(g, cap).sum() == n
    adj = np.zeros((n, n), dtype=bool)
    for v, nbrs in enumerate(g.adjacency):
        adj[v, nbrs] = True
    assert np.array_equal(adj, adj.T)
    assert not adj.diagonal().any()


def test_full_batch_covers_every_edge_both_ways():
    g = graph_from_edges(4, [(0, 1), (1, 2)])
    b = full_batch(g, 2)
    assert b.roots.tolist() == [0, 1, 2, 3]
    assert b.sampled_in_degree.tolist() == [[1, 2, 1, 0]] * 2
