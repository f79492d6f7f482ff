"""Private degree histogram and entropy-based membership inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from pmpgraph.graph import Graph, degree_histogram

# one edge changes two nodes' degrees by one: l1 sensitivity 2
HISTOGRAM_L1_SENSITIVITY = 2.0


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF Laplace transform of ``u`` drawn uniformly from (-1/2, 1/2)."""
    u = np.asarray(u, dtype=np.float64)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    if scale <= 0:
        raise ValueError("Laplace scale must be positive")
    u = rng.uniform(-0.5, 0.5, size=size)
    out = laplace_from_uniform(u, scale)
    return float(out) if size is None else out


@dataclass(frozen=True)
class NoisyHistogram:
    bins: np.ndarray
    epsilon: float
    cap: int

    @property
    def scale(self) -> float:
        return HISTOGRAM_L1_SENSITIVITY / self.epsilon


def private_degree_histogram(graph: Graph, epsilon: float, cap: int, rng: np.random.Generator) -> NoisyHistogram:
    """(eps, 0)-DP degree histogram; noisy counts are left unclamped and unrounded."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    exact = degree_histogram(graph, cap).astype(np.float64)
    noise = laplace_sample(HISTOGRAM_L1_SENSITIVITY / epsilon, rng, size=exact.shape)
    return NoisyHistogram(exact + noise, epsilon, cap)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC of positives over negatives; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _check_prob_rows(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of probability rows")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError(f"{name} rows must be nonnegative and sum to 1")
    return p


def prediction_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


@dataclass(frozen=True)
class MiaResult:
    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    auc: float


def entropy_mia(member_probs, nonmember_probs) -> MiaResult:
    """Score each node by negative prediction entropy; low entropy suggests membership."""
    mem = -prediction_entropy(_check_prob_rows(member_probs, "member_probs"))
    non = -prediction_entropy(_check_prob_rows(nonmember_probs, "nonmember_probs"))
    auc = roc_auc(np.concatenate([mem, non]), np.r_[np.ones(mem.size), np.zeros(non.size)])
    return MiaResult(mem, non, auc)
