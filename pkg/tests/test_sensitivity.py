import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from support import bounded_degree_graph, min_degree_graph, unit_rows

from pmpgraph.graph import graph_from_edges
from pmpgraph.sensitivity import (
    Aggregator,
    AggregatorSpec,
    brute_force_edge_sensitivity,
    brute_force_node_sensitivity,
    gcn_edge_sensitivity,
    gin_edge_sensitivity,
    node_sensitivity,
    vfgnn_rdp,
)

GIN = AggregatorSpec(Aggregator.GIN)


def triangle():
    return graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], unit_rows(np.random.default_rng(0), 3, 3))


class TestClosedForms:
    def test_gin(self):
        assert gin_edge_sensitivity(1.0) == pytest.approx(1.41421, abs=1e-5)
        assert gin_edge_sensitivity(0.0) == 0.0
        assert gin_edge_sensitivity(3.0) == pytest.approx(3 * math.sqrt(2), rel=1e-15)

    def test_gcn_hand_value(self):
        assert gcn_edge_sensitivity(1.0, 2) == pytest.approx(0.625 * math.sqrt(2), rel=1e-15)
        assert gcn_edge_sensitivity(1.0, 2) == pytest.approx(0.88388, abs=1e-5)

    def test_gcn_decreasing_and_vanishing(self):
        vals = [gcn_edge_sensitivity(1.0, k) for k in range(2, 51)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert gcn_edge_sensitivity(1.0, 10**6) < 1e-5

    def test_gcn_rejects_small_dmin(self):
        with pytest.raises(ValueError):
            gcn_edge_sensitivity(1.0, 1)

    def test_node(self):
        assert node_sensitivity(math.sqrt(2), 4) == pytest.approx(1 + 2 * math.sqrt(2), rel=1e-15)
        assert node_sensitivity(0.0, 7) == 1.0
        assert node_sensitivity(0.3, 1) == pytest.approx(1.3)

    def test_vfgnn(self):
        assert vfgnn_rdp(1.0, 1, 1, 1.0, 2) == 8.0
        assert vfgnn_rdp(1.0, 2, 2, 1.0, 2) / vfgnn_rdp(1.0, 2, 1, 1.0, 2) == 3.0
        assert vfgnn_rdp(1.0, 2, 2, 2.0, 2) == pytest.approx(vfgnn_rdp(1.0, 2, 2, 1.0, 2) / 4)
        with pytest.raises(ValueError):
            vfgnn_rdp(1.0, 2, 2, 0.0, 2)

    @pytest.mark.parametrize("w", [0.5, 2.0, 7.0])
    def test_homogeneous(self, w):
        assert gin_edge_sensitivity(w) == pytest.approx(w * gin_edge_sensitivity(1.0))
        assert gcn_edge_sensitivity(w, 3) == pytest.approx(w * gcn_edge_sensitivity(1.0, 3))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AggregatorSpec(Aggregator.GCN_TRUNCATED, d_min=1)
        with pytest.raises(ValueError):
            AggregatorSpec(Aggregator.GCN, None, (1.0,)).layer_sensitivities()
        assert AggregatorSpec("gin", None, (1.0, 2.0)).layer_sensitivities() == [
            pytest.approx(math.sqrt(2)),
            pytest.approx(2 * math.sqrt(2)),
        ]


class TestOracles:
    def test_triangle_attains_gin_bound(self):
        g = triangle()
        assert brute_force_edge_sensitivity(g, GIN, np.eye(3), g.features) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_edgeless_is_zero(self):
        g = graph_from_edges(4, [], unit_rows(np.random.default_rng(0), 4, 3))
        assert brute_force_edge_sensitivity(g, GIN, np.eye(3), g.features) == 0.0

    def test_gcn_below_eta_on_min_degree_graphs(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            d_min = int(rng.choice([2, 3, 5]))
            g = min_degree_graph(rng, int(rng.integers(8, 25)), d_min, 6)
            w = rng.standard_normal((4, 4))
            spec = AggregatorSpec(Aggregator.GCN, d_min, (np.linalg.norm(w, 2),))
            assert brute_force_edge_sensitivity(g, spec, w, g.features) <= spec.layer_sensitivities()[0] + 1e-9

    def test_node_oracle_removed_node_term(self):
        # single edge, W = I: removing node 0 shifts node 1 by h0, and node 0's own output has norm 1
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = graph_from_edges(2, [(0, 1)], x)
        assert brute_force_node_sensitivity(g, GIN, np.eye(2), x) == pytest.approx(math.sqrt(2), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 20), max_degree=st.integers(1, 6))
def test_gin_bound_is_sound(seed, n, max_degree):
    rng = np.random.default_rng(seed)
    g = bounded_degree_graph(rng, n, max_degree, 0.4)
    w = rng.standard_normal((4, 4))
    oracle = brute_force_edge_sensitivity(g, GIN, w, g.features)
    assert oracle <= gin_edge_sensitivity(np.linalg.norm(w, 2)) + 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 15), max_degree=st.integers(1, 6))
def test_node_bound_is_sound(seed, n, max_degree):
    rng = np.random.default_rng(seed)
    g = bounded_degree_graph(rng, n, max_degree, 0.5)
    w = rng.standard_normal((4, 4))
    bound = node_sensitivity(gin_edge_sensitivity(np.linalg.norm(w, 2)), max_degree)
    assert brute_force_node_sensitivity(g, GIN, w, g.features) <= bound + 1e-9
