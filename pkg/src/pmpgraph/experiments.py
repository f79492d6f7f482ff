"""Desk-scale SBM experiments: privacy-utility sweep and entropy membership inference.

Both share one task definition. The training batch is a single root and the
fan-in cap is 2 because the amplified bound keeps a noise-independent floor
that grows with the sampling probability; larger batches make small budgets
unreachable on a graph this size.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from pmpgraph.analytics import MiaResult, entropy_mia
from pmpgraph.graph import Graph, generate_sbm
from pmpgraph.protocol.session import run_session
from pmpgraph.seeding import substream
from pmpgraph.training import (
    TrainConfig,
    accuracy,
    build_parties,
    noise_for_budget,
    predict_proba,
    train_mlp_baseline,
)


@dataclass(frozen=True)
class SbmTask:
    block_sizes: tuple[int, ...] = (150, 150)
    p_in: float = 0.25
    p_out: float = 0.02
    feature_dim: int = 8
    feature_shift: float = 1.0
    train_fraction: float = 0.8
    member_fraction: float = 0.5

    def train_config(self, **overrides) -> TrainConfig:
        base = dict(aggregator="gin", max_degree=2, num_layers=2, dim=16, batch_size=1, steps=300, lr=5e-3)
        base.update(overrides)
        return TrainConfig(**base)

    def graph(self, seed: int) -> Graph:
        return generate_sbm(
            list(self.block_sizes), self.p_in, self.p_out, self.feature_dim, self.feature_shift, substream(seed, "data")
        )

    def split(self, seed: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
        n = sum(self.block_sizes)
        perm = substream(seed, "split").permutation(n)
        k = int(round(fraction * n))
        return np.sort(perm[:k]), np.sort(perm[k:])


DEFAULT_TASK = SbmTask()


@dataclass
class UtilityResult:
    epsilon: float
    theta: float
    test_accuracy: float


def utility_run(seed: int, epsilon: float, task: SbmTask = DEFAULT_TASK, **overrides) -> UtilityResult:
    """Train through the two-party session at budget ``epsilon``; ``inf`` means no noise."""
    g = task.graph(seed)
    train, test = task.split(seed, task.train_fraction)
    g = g.with_train_mask(train)
    cfg = task.train_config(**overrides)
    cfg.theta = noise_for_budget(cfg, g.num_train, g.num_edges, epsilon)
    a, b = build_parties(g, cfg, seed)
    run_session(a, b, cfg.steps)
    probs = predict_proba(a, b, test, substream(seed, "eval"))
    return UtilityResult(epsilon, cfg.theta, accuracy(probs, g.labels[test]))


def mlp_run(seed: int, task: SbmTask = DEFAULT_TASK, **overrides) -> float:
    """Test accuracy of the feature-only baseline on the same split."""
    g = task.graph(seed)
    train, test = task.split(seed, task.train_fraction)
    return train_mlp_baseline(g.with_train_mask(train), task.train_config(**overrides), seed, test)


def mia_run(seed: int, epsilon: float, task: SbmTask = DEFAULT_TASK, **overrides) -> MiaResult:
    """Train on the subgraph induced by a random member half, attack on the full graph."""
    g = task.graph(seed)
    members, others = task.split(seed, task.member_fraction)
    sub, _ = g.subgraph(members)
    cfg = task.train_config(**overrides)
    cfg.theta = noise_for_budget(cfg, sub.num_train, sub.num_edges, epsilon)
    a, b = build_parties(sub, cfg, seed)
    run_session(a, b, cfg.steps)
    # query API: the trained model now sees every node and edge
    a.graph = dataclasses.replace(g, labels=None)
    rng = substream(seed, "eval")
    return entropy_mia(predict_proba(a, b, members, rng), predict_proba(a, b, others, rng))


def parse_epsilon(text: str) -> float:
    value = float(text)
    if math.isnan(value) or value <= 0:
        raise ValueError(f"epsilon must be positive or inf, got {text!r}")
    return value
