"""Random graph families shared by the test modules."""

import networkx as nx
import numpy as np

from pmpgraph.graph import Graph, graph_from_edges


def bounded_degree_graph(rng: np.random.Generator, n: int, max_degree: int, p: float, dim: int = 4) -> Graph:
    """Erdos-Renyi style graph, dropping edges that would push a degree above ``max_degree``."""
    deg = np.zeros(n, dtype=int)
    edges = []
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    for i in rng.permutation(len(pairs)):
        u, v = pairs[i]
        if rng.random() < p and deg[u] < max_degree and deg[v] < max_degree:
            edges.append((u, v))
            deg[u] += 1
            deg[v] += 1
    return graph_from_edges(n, edges, unit_rows(rng, n, dim))


def min_degree_graph(rng: np.random.Generator, n: int, d_min: int, max_degree: int, dim: int = 4) -> Graph:
    """Random ``k``-regular graph (``d_min <= k <= max_degree``) topped up without exceeding ``max_degree``."""
    ks = [k for k in range(d_min, max_degree + 1) if (n * k) % 2 == 0 and k < n]
    k = int(rng.choice(ks))
    g = nx.random_regular_graph(k, n, seed=int(rng.integers(2**31)))
    extra = nx.complement(g)
    for u, v in rng.permutation(np.array(list(extra.edges()), dtype=int).reshape(-1, 2)):
        if rng.random() < 0.3 and g.degree[u] < max_degree and g.degree[v] < max_degree:
            g.add_edge(int(u), int(v))
    return graph_from_edges(n, list(g.edges()), unit_rows(rng, n, dim))


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def dense_adjacency(graph: Graph) -> np.ndarray:
    a = np.zeros((graph.num_nodes, graph.num_nodes))
    for v, nbrs in enumerate(graph.adjacency):
        a[v, nbrs] = 1.0
    return a


def plain_forward(batch, h0, weights, kind):
    """Reference GIN/GCN over the sampled per-layer edge lists, one node at a time."""
    n = batch.num_nodes
    h = [v / np.linalg.norm(v) if np.linalg.norm(v) > 1e-12 else np.zeros_like(v) for v in h0]
    outs = []
    for l, w in enumerate(weights):
        nbrs = {v: [] for v in range(n)}
        for s, d in zip(batch.layer_src[l], batch.layer_dst[l]):
            nbrs[int(d)].append(int(s))
        new = []
        for v in range(n):
            if kind == "gin":
                agg = h[v] + sum((h[u] for u in nbrs[v]), np.zeros_like(h[v]))
            else:
                dv = len(nbrs[v])
                agg = h[v] / (dv + 1)
                for u in nbrs[v]:
                    agg = agg + h[u] / np.sqrt((len(nbrs[u]) + 1) * (dv + 1))
            r = np.maximum(w @ agg, 0.0)
            nr = np.linalg.norm(r)
            new.append(r / nr if nr > 1e-12 else np.zeros_like(r))
        h = new
        outs.append(np.array(h))
    return outs
