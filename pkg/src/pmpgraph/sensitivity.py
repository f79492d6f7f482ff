"""Edge and node sensitivity bounds, with brute-force oracles for small graphs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from pmpgraph.graph import Graph


class Aggregator(str, enum.Enum):
    GIN = "gin"
    GCN = "gcn"
    GCN_TRUNCATED = "gcn_truncated"


@dataclass(frozen=True)
class AggregatorSpec:
    kind: Aggregator
    d_min: int | None = None
    layer_opnorms: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "kind", Aggregator(self.kind))
        if self.kind is Aggregator.GCN_TRUNCATED and (self.d_min is None or self.d_min < 2):
            raise ValueError("truncated GCN needs d_min >= 2")

    def layer_sensitivities(self) -> list[float]:
        """Per-layer edge sensitivity bounds for the configured aggregator."""
        if self.kind is Aggregator.GIN:
            return [gin_edge_sensitivity(w) for w in self.layer_opnorms]
        if self.d_min is None:
            raise ValueError("GCN sensitivity needs a minimum-degree assumption (d_min)")
        return [gcn_edge_sensitivity(w, self.d_min) for w in self.layer_opnorms]


def gin_edge_sensitivity(opnorm: float) -> float:
    if opnorm < 0:
        raise ValueError("operator norm must be nonnegative")
    return math.sqrt(2.0) * opnorm


def gcn_edge_sensitivity(opnorm: float, d_min: int) -> float:
    """Edge sensitivity bound of a GCN layer on graphs with min degree ``d_min``."""
    if d_min < 2:
        raise ValueError("d_min must be >= 2")
    if opnorm < 0:
        raise ValueError("operator norm must be nonnegative")
    k = float(d_min)
    return math.sqrt(2.0) * ((1.0 - 1.0 / k) / (2.0 * k) + 1.0 / (k * (k + 1.0)) + 1.0 / (k + 1.0)) * opnorm


def node_sensitivity(edge_sensitivity: float, max_degree: int) -> float:
    """Node-removal sensitivity ``1 + sqrt(D) * S`` of one layer."""
    if edge_sensitivity < 0 or max_degree < 1:
        raise ValueError("need edge_sensitivity >= 0 and max_degree >= 1")
    return 1.0 + math.sqrt(max_degree) * edge_sensitivity


def vfgnn_rdp(norm_const: float, max_degree: int, layers: int, theta: float, alpha: float) -> float:
    """RDP of the VFGNN baseline (noise on the final layer only)."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    geo = sum(max_degree**l for l in range(layers))
    return 4.0 * alpha * norm_const**2 * geo / theta**2


def _dense_adjacency(graph: Graph) -> np.ndarray:
    a = np.zeros((graph.num_nodes, graph.num_nodes))
    for v, nbrs in enumerate(graph.adjacency):
        a[v, nbrs] = 1.0
    return a


def linear_update(
    adj: np.ndarray,
    kind: Aggregator,
    weight: np.ndarray,
    inputs: np.ndarray,
    d_min: int | None = None,
    truncated: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Noiseless one-layer pre-activations from a dense adjacency matrix."""
    kind = Aggregator(kind)
    deg = adj.sum(axis=1)
    msgs = inputs @ weight.T
    if kind is Aggregator.GIN:
        return msgs + adj @ msgs
    s = 1.0 / np.sqrt(deg + 1.0)
    out = (s * s)[:, None] * msgs + s[:, None] * (adj @ (s[:, None] * msgs))
    if kind is Aggregator.GCN_TRUNCATED:
        w_tr, b_tr = truncated
        low = deg < d_min
        out[low] = inputs[low] @ w_tr.T + b_tr
    return out


def brute_force_edge_sensitivity(
    graph: Graph,
    spec: AggregatorSpec,
    weight: np.ndarray,
    inputs: np.ndarray,
    truncated: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Largest stacked l2 change of one layer's pre-activations over all single-edge removals."""
    adj = _dense_adjacency(graph)
    base = linear_update(adj, spec.kind, weight, inputs, spec.d_min, truncated)
    worst = 0.0
    for u, v in graph.edges():
        adj[u, v] = adj[v, u] = 0.0
        diff = linear_update(adj, spec.kind, weight, inputs, spec.d_min, truncated) - base
        adj[u, v] = adj[v, u] = 1.0
        worst = max(worst, float(np.sqrt(np.sum(diff * diff))))
    return worst


def brute_force_node_sensitivity(
    graph: Graph,
    spec: AggregatorSpec,
    weight: np.ndarray,
    inputs: np.ndarray,
) -> float:
    """Largest node-removal change: others' pre-activation shift plus the removed node's embedding.

    The removed node contributes its post-activation, normalized output, as
    that is what the mechanism releases for it.
    """
    adj = _dense_adjacency(graph)
    base = linear_update(adj, spec.kind, weight, inputs, spec.d_min)
    released = np.maximum(base, 0.0)
    norms = np.linalg.norm(released, axis=1)
    worst = 0.0
    for v in range(graph.num_nodes):
        keep = np.arange(graph.num_nodes) != v
        sub = adj[np.ix_(keep, keep)]
        diff = linear_update(sub, spec.kind, weight, inputs[keep], spec.d_min) - base[keep]
        own = 1.0 if norms[v] > 1e-12 else 0.0
        worst = max(worst, float(np.sqrt(np.sum(diff * diff) + own)))
    return worst
