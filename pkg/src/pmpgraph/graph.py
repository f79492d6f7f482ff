"""Graph storage, file loading, neighborhood sampling and synthetic graphs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from pmpgraph.errors import DuplicateEdgeError, GraphFormatError, SelfLoopError


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with node features and (partial) labels.

    ``labels`` has one entry per node; ``-1`` marks a node without a label.
    ``train_mask`` lists the ids of the training nodes (the root pool).
    """

    num_nodes: int
    adjacency: tuple[np.ndarray, ...]
    features: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    max_degree_bound: int | None = None

    def __post_init__(self):
        if len(self.adjacency) != self.num_nodes:
            raise ValueError("adjacency must have one entry per node")
        if self.features.shape[0] != self.num_nodes:
            raise ValueError(
                f"feature rows ({self.features.shape[0]}) != num_nodes ({self.num_nodes})"
            )
        if self.labels is not None:
            if self.labels.shape != (self.num_nodes,):
                raise ValueError("labels must be a length-N vector")
            if np.any(self.labels[self.train_mask] < 0):
                raise ValueError("every training node needs a label")
        if self.train_mask.size and (self.train_mask.min() < 0 or self.train_mask.max() >= self.num_nodes):
            raise ValueError("train_mask ids out of range")
        if self.max_degree_bound is not None and self.num_nodes and self.degrees.max() > self.max_degree_bound:
            raise ValueError("graph exceeds its declared max_degree_bound")

    @property
    def degrees(self) -> np.ndarray:
        return np.fromiter((len(a) for a in self.adjacency), dtype=np.int64, count=self.num_nodes)

    @property
    def num_edges(self) -> int:
        return int(self.degrees.sum()) // 2

    @property
    def num_train(self) -> int:
        return int(self.train_mask.size)

    def edges(self) -> np.ndarray:
        """Canonical edge list, one ``(min, max)`` row per undirected edge."""
        rows = [(v, u) for v, nbrs in enumerate(self.adjacency) for u in nbrs if v < u]
        return np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.adjacency[u]
        i = np.searchsorted(nbrs, v)
        return bool(i < len(nbrs) and nbrs[i] == v)

    def with_edges(self, edges: np.ndarray) -> "Graph":
        """Copy of this graph with its edge set replaced."""
        return Graph(
            num_nodes=self.num_nodes,
            adjacency=_adjacency_from_edges(self.num_nodes, edges),
            features=self.features,
            labels=self.labels,
            train_mask=self.train_mask,
            max_degree_bound=self.max_degree_bound,
        )

    def with_train_mask(self, train_mask: np.ndarray) -> "Graph":
        return Graph(
            num_nodes=self.num_nodes,
            adjacency=self.adjacency,
            features=self.features,
            labels=self.labels,
            train_mask=np.sort(np.asarray(train_mask, dtype=np.int64)),
            max_degree_bound=self.max_degree_bound,
        )

    def subgraph(self, nodes: np.ndarray) -> tuple["Graph", np.ndarray]:
        """Induced subgraph on ``nodes``; returns it with the local->global id map."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = -np.ones(self.num_nodes, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        e = self.edges()
        keep = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0) if e.size else np.zeros(0, dtype=bool)
        sub_edges = remap[e[keep]] if e.size else e
        train = remap[self.train_mask]
        sub = Graph(
            num_nodes=int(nodes.size),
            adjacency=_adjacency_from_edges(int(nodes.size), sub_edges),
            features=self.features[nodes],
            labels=None if self.labels is None else self.labels[nodes],
            train_mask=np.sort(train[train >= 0]),
        )
        return sub, nodes


def _adjacency_from_edges(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, ...]:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    nbrs: list[list[int]] = [[] for _ in range(num_nodes)]
    for u, v in edges:
        nbrs[u].append(int(v))
        nbrs[v].append(int(u))
    return tuple(np.array(sorted(a), dtype=np.int64) for a in nbrs)


def graph_from_edges(
    num_nodes: int,
    edges,
    features: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    train_mask: np.ndarray | None = None,
    max_degree_bound: int | None = None,
) -> Graph:
    """Build a validated graph from an undirected edge list.

    Self-loops and repeated edges (in either orientation) raise.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    seen: set[tuple[int, int]] = set()
    for i, (u, v) in enumerate(edges):
        if u == v:
            raise SelfLoopError(f"self-loop on node {u}", line=i + 1)
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise GraphFormatError(f"node id out of range in edge ({u}, {v})", line=i + 1)
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdgeError(f"duplicate edge {key}", line=i + 1)
        seen.add(key)
    if features is None:
        features = np.zeros((num_nodes, 1))
    if train_mask is None:
        train_mask = np.arange(num_nodes) if labels is not None else np.zeros(0, dtype=np.int64)
    return Graph(
        num_nodes=num_nodes,
        adjacency=_adjacency_from_edges(num_nodes, edges),
        features=np.asarray(features, dtype=np.float64),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        train_mask=np.sort(np.asarray(train_mask, dtype=np.int64)),
        max_degree_bound=max_degree_bound,
    )


def _parse_int(token: str, path: Path, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphFormatError(f"{path.name}: non-numeric field {token!r}", line=line) from None


def load_graph(edge_path, feature_path, label_path=None) -> Graph:
    """Load a graph from the tab-separated edge file and CSV feature/label files.

    The node count is the number of feature rows. Labelled nodes form the
    training pool.
    """
    edge_path, feature_path = Path(edge_path), Path(feature_path)

    feats = []
    with open(feature_path, encoding="utf-8", newline="") as f:
        for i, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                feats.append([float(x) for x in row])
            except ValueError:
                raise GraphFormatError(f"{feature_path.name}: non-numeric field", line=i) from None
    if feats and len({len(r) for r in feats}) != 1:
        raise GraphFormatError(f"{feature_path.name}: ragged feature rows")
    features = np.asarray(feats, dtype=np.float64).reshape(len(feats), -1)
    n = features.shape[0]

    edges = []
    seen: set[tuple[int, int]] = set()
    with open(edge_path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"{edge_path.name}: expected 'u<TAB>v'", line=i)
            u, v = (_parse_int(p.strip(), edge_path, i) for p in parts)
            if u >= n or v >= n or u < 0 or v < 0:
                raise GraphFormatError(
                    f"{edge_path.name}: node id out of range for {n} feature rows", line=i
                )
            if u == v:
                raise SelfLoopError(f"self-loop on node {u}", line=i)
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DuplicateEdgeError(f"duplicate edge {key}", line=i)
            seen.add(key)
            edges.append(key)

    labels = None
    if label_path is not None:
        label_path = Path(label_path)
        labels = -np.ones(n, dtype=np.int64)
        with open(label_path, encoding="utf-8", newline="") as f:
            for i, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                if len(row) != 2:
                    raise GraphFormatError(f"{label_path.name}: expected 'node_id,label'", line=i)
                node, lab = (_parse_int(t.strip(), label_path, i) for t in row)
                if not 0 <= node < n:
                    raise GraphFormatError(f"{label_path.name}: node id {node} out of range", line=i)
                labels[node] = lab
    train = np.flatnonzero(labels >= 0) if labels is not None else None
    return graph_from_edges(n, edges, features, labels, train)


def save_graph(graph: Graph, edge_path, feature_path, label_path=None) -> None:
    with open(edge_path, "w", encoding="utf-8", newline="\n") as f:
        for u, v in graph.edges():
            f.write(f"{u}\t{v}\n")
    with open(feature_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in graph.features:
            w.writerow([repr(float(x)) for x in row])
    if label_path is not None and graph.labels is not None:
        with open(label_path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            for v in range(graph.num_nodes):
                if graph.labels[v] >= 0:
                    w.writerow([v, int(graph.labels[v])])


@dataclass(frozen=True)
class SampledBatch:
    """B rooted L-hop sampled subgraphs merged into one computation graph.

    Local ids ``0..B-1`` are the roots, in order. ``layer_src[l]`` /
    ``layer_dst[l]`` hold the directed local edges used by message-passing
    layer ``l + 1``; messages flow from ``src`` into ``dst``.
    """

    roots: np.ndarray
    nodes: np.ndarray
    layer_src: tuple[np.ndarray, ...]
    layer_dst: tuple[np.ndarray, ...]

    @property
    def num_layers(self) -> int:
        return len(self.layer_src)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.size)

    @property
    def local_index(self) -> dict[int, int]:
        return {int(g): i for i, g in enumerate(self.nodes)}

    @property
    def sampled_in_degree(self) -> np.ndarray:
        """``(L, n)`` fan-in of every batch node at every layer."""
        return np.stack([np.bincount(dst, minlength=self.num_nodes) for dst in self.layer_dst])

    def global_edges(self, layer: int) -> np.ndarray:
        return np.stack([self.nodes[self.layer_src[layer]], self.nodes[self.layer_dst[layer]]], axis=1)


def _partial_shuffle(nbrs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    out = nbrs.copy()
    n = out.size
    for i in range(k):
        j = int(rng.integers(i, n))
        out[i], out[j] = out[j], out[i]
    return out[:k]


def sample_neighborhood(
    graph: Graph, roots: Sequence[int], num_layers: int, max_fanin: int, rng: np.random.Generator
) -> SampledBatch:
    """Uniform L-hop neighborhood sampling with at most ``max_fanin`` neighbors per node.

    Each reached node draws its neighbors once, without replacement, and
    keeps that draw for every layer it takes part in. A node first reached
    at hop k needs embeddings up to layer ``L - k``, so layer ``l`` only
    carries the edges into nodes at depth ``<= L - l``.
    """
    if num_layers < 1 or max_fanin < 1:
        raise ValueError("num_layers and max_fanin must be >= 1")
    roots = np.asarray(roots, dtype=np.int64)
    if roots.size and (roots.min() < 0 or roots.max() >= graph.num_nodes):
        raise ValueError("unknown root id")
    if np.unique(roots).size != roots.size:
        raise ValueError("roots must be distinct")

    local: dict[int, int] = {}
    order: list[int] = []
    depth: list[int] = []
    for r in roots:
        local[int(r)] = len(order)
        order.append(int(r))
        depth.append(0)

    src: list[int] = []
    dst: list[int] = []
    frontier = list(range(len(order)))
    for hop in range(1, num_layers + 1):
        nxt = []
        for v_local in frontier:
            nbrs = graph.adjacency[order[v_local]]
            k = min(nbrs.size, max_fanin)
            picked = _partial_shuffle(nbrs, k, rng) if k < nbrs.size else nbrs
            for u in picked:
                u = int(u)
                if u not in local:
                    local[u] = len(order)
                    order.append(u)
                    depth.append(hop)
                    nxt.append(local[u])
                src.append(local[u])
                dst.append(v_local)
        frontier = nxt

    src_a = np.asarray(src, dtype=np.int64)
    dst_a = np.asarray(dst, dtype=np.int64)
    depth_a = np.asarray(depth, dtype=np.int64)
    layer_src, layer_dst = [], []
    for layer in range(1, num_layers + 1):
        keep = depth_a[dst_a] <= num_layers - layer
        layer_src.append(src_a[keep])
        layer_dst.append(dst_a[keep])
    return SampledBatch(
        roots=roots.copy(),
        nodes=np.asarray(order, dtype=np.int64),
        layer_src=tuple(layer_src),
        layer_dst=tuple(layer_dst),
    )


def full_batch(graph: Graph, num_layers: int) -> SampledBatch:
    """Every node as a root, every edge in both directions at every layer."""
    e = graph.edges()
    src = np.concatenate([e[:, 0], e[:, 1]]) if e.size else np.zeros(0, dtype=np.int64)
    dst = np.concatenate([e[:, 1], e[:, 0]]) if e.size else np.zeros(0, dtype=np.int64)
    nodes = np.arange(graph.num_nodes, dtype=np.int64)
    return SampledBatch(
        roots=nodes,
        nodes=nodes,
        layer_src=tuple(src for _ in range(num_layers)),
        layer_dst=tuple(dst for _ in range(num_layers)),
    )


def sample_roots(graph: Graph, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch_size`` distinct training nodes uniformly."""
    if batch_size > graph.num_train:
        raise ValueError(f"batch size {batch_size} exceeds {graph.num_train} training nodes")
    return rng.choice(graph.train_mask, size=batch_size, replace=False)


def generate_sbm(
    block_sizes: Sequence[int],
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_shift: float,
    rng: np.random.Generator,
) -> Graph:
    """Stochastic block model graph with Gaussian block-mean features.

    Labels are block ids. Block ``k``'s feature mean is ``feature_shift``
    times a fixed random unit vector, so classes overlap for small shifts.
    """
    if len(block_sizes) == 0:
        raise ValueError("block_sizes must be non-empty")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("edge probabilities must lie in [0, 1]")
    labels = np.repeat(np.arange(len(block_sizes)), block_sizes)
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < probs
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    means = rng.standard_normal((len(block_sizes), feature_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    features = feature_shift * means[labels] + rng.standard_normal((n, feature_dim))
    return Graph(
        num_nodes=n,
        adjacency=_adjacency_from_edges(n, edges),
        features=features,
        labels=labels.astype(np.int64),
        train_mask=np.arange(n, dtype=np.int64),
    )


def degree_histogram(graph: Graph, cap: int) -> np.ndarray:
    """Counts of nodes per degree ``0..cap-1``; the last bin holds degree ``>= cap``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    return np.bincount(np.minimum(graph.degrees, cap), minlength=cap + 1)
