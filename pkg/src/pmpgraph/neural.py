"""Dense layers with manual gradients: MLP encoder/decoder, softmax
cross-entropy and Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class Mlp:
    """ReLU MLP; the last layer is linear. Weights are ``(out, in)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"bias {i} shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input dim {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            p[f"w{i}"] = w
            p[f"b{i}"] = b
        return p

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[f"w{i}"]
            self.biases[i] = params[f"b{i}"]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the output and the per-layer inputs needed by :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {x.shape}")
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        grads = {}
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            grads[f"w{i}"] = g.T @ h_in
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * (h_in > 0)
        return grads, g


def encode(encoder: Mlp, x_rows: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    return encoder.forward(x_rows)


def concat_layers(root_slice: np.ndarray) -> np.ndarray:
    """``(B, L, d)`` -> ``(B, L*d)`` with layer 1 first."""
    b = root_slice.shape[0]
    return root_slice.reshape(b, -1)


def decode_concat(head: Mlp, root_slice: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits from the concatenation of all layers' root embeddings."""
    flat = concat_layers(np.asarray(root_slice, dtype=np.float64))
    if flat.shape[1] != head.in_dim:
        raise ValueError(
            f"decoder expects {head.in_dim} inputs, embedding stack gives {flat.shape[1]}"
        )
    return head.forward(flat)


def decode_concat_backward(head: Mlp, cache, grad_logits: np.ndarray, root_shape) -> tuple[dict, np.ndarray]:
    grads, g_flat = head.backward(cache, grad_logits)
    return grads, g_flat.reshape(root_shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {b} ids in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(b), labels]))
    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays and advances ``state``."""
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient keys differ: {sorted(params)} vs {sorted(grads)}")
    state.step += 1
    t = state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out
