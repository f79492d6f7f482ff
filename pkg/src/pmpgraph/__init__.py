"""Edge-private graph representation learning for two-party split training."""

from pmpgraph.graph import Graph, SampledBatch, load_graph, sample_neighborhood, generate_sbm, degree_histogram

__all__ = [
    "Graph",
    "SampledBatch",
    "load_graph",
    "sample_neighborhood",
    "generate_sbm",
    "degree_histogram",
]

__version__ = "0.1.0"
