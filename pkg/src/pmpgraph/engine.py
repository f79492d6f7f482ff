"""Perturbed message passing: forward pass with Gaussian perturbation and
row normalization, truncated GCN variant, exact reverse-mode gradients and
spectral normalization of layer weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from pmpgraph.graph import SampledBatch
from pmpgraph.sensitivity import Aggregator, AggregatorSpec

NORM_EPS = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit-normalize a vector, or each row of a matrix; near-zero rows map to zero."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        n = np.linalg.norm(v)
        return v / n if n > NORM_EPS else np.zeros_like(v)
    n = np.linalg.norm(v, axis=1, keepdims=True)
    safe = np.where(n > NORM_EPS, n, 1.0)
    return np.where(n > NORM_EPS, v / safe, 0.0)


def _normalize_backward(out: np.ndarray, norms: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # d(x/|x|) = (I - x_hat x_hat^T) / |x|
    proj = grad - out * np.sum(out * grad, axis=1, keepdims=True)
    safe = np.where(norms > NORM_EPS, norms, 1.0)
    return np.where(norms > NORM_EPS, proj / safe, 0.0)


@dataclass
class PmpLayer:
    """One message-passing layer: shared weight, power-iteration vector, noise std.

    ``theta == 0`` disables perturbation. ``w_tr``/``b_tr`` hold the
    edge-free branch used by truncated GCN.
    """

    weight: np.ndarray
    u: np.ndarray
    theta: float = 0.0
    w_tr: np.ndarray | None = None
    b_tr: np.ndarray | None = None

    @classmethod
    def init(cls, dim: int, theta: float, rng: np.random.Generator, truncated: bool = False) -> "PmpLayer":
        limit = np.sqrt(6.0 / (2 * dim))
        weight = rng.uniform(-limit, limit, size=(dim, dim))
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        w_tr = b_tr = None
        if truncated:
            w_tr = rng.uniform(-limit, limit, size=(dim, dim))
            b_tr = np.zeros(dim)
        return cls(weight, u, theta, w_tr, b_tr)

    @property
    def has_truncated_path(self) -> bool:
        return self.w_tr is not None and self.b_tr is not None

    def params(self) -> dict[str, np.ndarray]:
        p = {"weight": self.weight}
        if self.has_truncated_path:
            p["w_tr"] = self.w_tr
            p["b_tr"] = self.b_tr
        return p


def power_iteration(weight: np.ndarray, u: np.ndarray, iters: int = 1) -> tuple[float, np.ndarray]:
    """Top singular value estimate ``u^T W v`` and the refreshed left vector."""
    if not np.any(weight):
        raise ValueError("cannot spectrally normalize a zero matrix")
    v = None
    for _ in range(max(iters, 1)):
        v = weight.T @ u
        v = v / np.linalg.norm(v)
        u = weight @ v
        u = u / np.linalg.norm(u)
    return float(u @ weight @ v), u


def spectral_normalize(layer: PmpLayer, iters: int = 1) -> PmpLayer:
    """Divide ``layer.weight`` in place by its power-iteration estimate of the top singular value.

    The left singular vector estimate ``u`` persists across calls, so one
    iteration per training step tracks the norm as the weight drifts.
    """
    sigma, layer.u = power_iteration(layer.weight, layer.u, iters)
    layer.weight = layer.weight / sigma
    return layer


def estimated_opnorm(layer: PmpLayer) -> float:
    """Rayleigh-quotient norm estimate using the stored vector, without updating it."""
    v = layer.weight.T @ layer.u
    v /= np.linalg.norm(v)
    return float(layer.u @ layer.weight @ v)


def coefficient_matrix(batch: SampledBatch, layer: int, kind: Aggregator) -> sp.csr_matrix:
    """Sparse ``(n, n)`` aggregation matrix ``C`` with ``h~ = C (H W^T)`` for one layer."""
    n = batch.num_nodes
    src, dst = batch.layer_src[layer], batch.layer_dst[layer]
    if kind is Aggregator.GIN:
        self_w = np.ones(n)
        edge_w = np.ones(src.size)
    else:
        deg = np.bincount(dst, minlength=n).astype(np.float64)
        s = 1.0 / np.sqrt(deg + 1.0)
        self_w = s * s
        edge_w = s[src] * s[dst]
    rows = np.concatenate([np.arange(n), dst])
    cols = np.concatenate([np.arange(n), src])
    vals = np.concatenate([self_w, edge_w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class _LayerTape:
    coeff: sp.csr_matrix
    h_in: np.ndarray
    mixed: np.ndarray
    low: np.ndarray | None
    z: np.ndarray
    norms: np.ndarray
    out: np.ndarray


@dataclass
class ForwardTape:
    batch: SampledBatch
    kind: Aggregator
    h0_raw: np.ndarray
    h0_norms: np.ndarray
    steps: list[_LayerTape] = field(default_factory=list)


@dataclass
class EmbeddingStack:
    """Per-layer embeddings for every batch node; rows ``0..B-1`` are the roots."""

    layers: list[np.ndarray]
    num_roots: int
    tape: ForwardTape | None = None

    def root_slice(self) -> np.ndarray:
        """``(B, L, d)`` root embeddings."""
        return np.stack([h[: self.num_roots] for h in self.layers], axis=1)


def _check_inputs(batch: SampledBatch, h0: np.ndarray, layers: list[PmpLayer]):
    if h0.ndim != 2 or h0.shape[0] != batch.num_nodes:
        raise ValueError(f"h0 must have {batch.num_nodes} rows, got shape {h0.shape}")
    if len(layers) != batch.num_layers:
        raise ValueError(f"{len(layers)} layers given for a {batch.num_layers}-layer batch")
    dim = h0.shape[1]
    for i, layer in enumerate(layers):
        if layer.weight.shape[1] != dim:
            raise ValueError(f"layer {i} expects input dim {layer.weight.shape[1]}, got {dim}")
        dim = layer.weight.shape[0]


def _run(batch, h0, layers, kind, d_min, rng) -> EmbeddingStack:
    h0 = np.asarray(h0, dtype=np.float64)
    _check_inputs(batch, h0, layers)
    h0_norms = np.linalg.norm(h0, axis=1, keepdims=True)
    h = l2_normalize(h0)
    tape = ForwardTape(batch, kind, h0, h0_norms)
    outs = []
    for l, layer in enumerate(layers):
        coeff = coefficient_matrix(batch, l, kind)
        mixed = coeff @ h
        pre = mixed @ layer.weight.T
        low = None
        if kind is Aggregator.GCN_TRUNCATED:
            low = np.bincount(batch.layer_dst[l], minlength=batch.num_nodes) < d_min
            pre[low] = h[low] @ layer.w_tr.T + layer.b_tr
        if layer.theta > 0:
            pre = pre + layer.theta * rng.standard_normal(pre.shape)
        r = np.maximum(pre, 0.0)
        norms = np.linalg.norm(r, axis=1, keepdims=True)
        out = l2_normalize(r)
        tape.steps.append(_LayerTape(coeff, h, mixed, low, pre, norms, out))
        outs.append(out)
        h = out
    return EmbeddingStack(outs, batch.roots.size, tape)


def pmp_forward(
    batch: SampledBatch,
    h0: np.ndarray,
    layers: list[PmpLayer],
    spec: AggregatorSpec,
    rng: np.random.Generator,
) -> EmbeddingStack:
    """Perturbed GIN/GCN message passing over a sampled batch.

    Inputs are unit-normalized first. Each layer aggregates, adds
    ``N(0, theta^2 I)`` noise, applies ReLU and unit-normalizes. GCN
    coefficients use fan-in within the sampled batch, never global degrees.
    """
    if spec.kind not in (Aggregator.GIN, Aggregator.GCN):
        raise ValueError("pmp_forward handles GIN and GCN; use truncated_forward for truncated GCN")
    return _run(batch, h0, layers, spec.kind, None, rng)


def truncated_forward(
    batch: SampledBatch,
    h0: np.ndarray,
    layers: list[PmpLayer],
    d_min: int,
    rng: np.random.Generator,
) -> EmbeddingStack:
    """GCN message passing that blocks incoming messages for nodes with fan-in below ``d_min``.

    Those nodes use ``W_tr h + b_tr`` instead, which reads no edges.
    """
    if any(not layer.has_truncated_path for layer in layers):
        raise ValueError("every layer needs w_tr and b_tr for truncated message passing")
    return _run(batch, h0, layers, Aggregator.GCN_TRUNCATED, d_min, rng)


@dataclass
class PmpGradients:
    layers: list[dict[str, np.ndarray]]
    h0: np.ndarray


def pmp_backward(
    batch: SampledBatch,
    layers: list[PmpLayer],
    stack: EmbeddingStack,
    root_grads: np.ndarray,
) -> PmpGradients:
    """Reverse-mode gradients given ``dLoss/dH`` for the roots.

    ``root_grads`` has shape ``(B, L, d)``, matching :meth:`EmbeddingStack.root_slice`.
    Noise draws are constants of the recorded tape. The returned ``h0``
    gradient is with respect to the raw, un-normalized inputs.
    """
    tape = stack.tape
    if tape is None or tape.batch is not batch:
        raise ValueError("forward tape does not belong to this batch")
    if len(tape.steps) != len(layers):
        raise ValueError("tape depth differs from the layer count")
    root_grads = np.asarray(root_grads, dtype=np.float64)
    n_layers = len(layers)
    if root_grads.shape[:2] != (stack.num_roots, n_layers):
        raise ValueError(f"root_grads must have shape (B, L, d), got {root_grads.shape}")

    grads: list[dict[str, np.ndarray]] = [dict() for _ in layers]
    g = np.zeros_like(tape.steps[-1].out)
    for l in range(n_layers - 1, -1, -1):
        step, layer = tape.steps[l], layers[l]
        g = g.copy()
        g[: stack.num_roots] += root_grads[:, l, :]
        g_r = _normalize_backward(step.out, step.norms, g)
        g_pre = g_r * (step.z > 0)
        g_mp = g_pre
        if step.low is not None:
            g_mp = np.where(step.low[:, None], 0.0, g_pre)
            g_low = g_pre[step.low]
            h_low = step.h_in[step.low]
            grads[l]["w_tr"] = g_low.T @ h_low
            grads[l]["b_tr"] = g_low.sum(axis=0)
        grads[l]["weight"] = g_mp.T @ step.mixed
        g_in = step.coeff.T @ (g_mp @ layer.weight)
        if step.low is not None:
            g_in[step.low] += g_pre[step.low] @ layer.w_tr
        g = g_in
    h0_unit = l2_normalize(tape.h0_raw)
    g_h0 = _normalize_backward(h0_unit, tape.h0_norms, g)
    return PmpGradients(grads, g_h0)
