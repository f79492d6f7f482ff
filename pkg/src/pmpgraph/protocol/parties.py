"""State and local computation of the two parties in split training.

Party A owns the graph, features, encoder and message-passing layers.
Party B owns the labels and the decoder. Neither object holds the other's
data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pmpgraph.accountant import AccountantState, compose
from pmpgraph.engine import PmpLayer, pmp_backward, pmp_forward, power_iteration, truncated_forward
from pmpgraph.graph import Graph, SampledBatch, sample_neighborhood
from pmpgraph.neural import AdamState, Mlp, adam_step, cross_entropy_loss, decode_concat, decode_concat_backward, softmax
from pmpgraph.sensitivity import Aggregator, AggregatorSpec


@dataclass
class _Pending:
    batch: SampledBatch
    enc_cache: list
    stack: object
    layers: list[PmpLayer]
    sigmas: list[float]


def scaled_layers(layers: list[PmpLayer], sigmas: list[float]) -> list[PmpLayer]:
    """Copies of ``layers`` whose message-passing weight is divided by ``sigma``."""
    return [PmpLayer(l.weight / s, l.u, l.theta, l.w_tr, l.b_tr) for l, s in zip(layers, sigmas)]


@dataclass
class PartyA:
    graph: Graph
    encoder: Mlp
    layers: list[PmpLayer]
    spec: AggregatorSpec
    max_degree: int
    rng: np.random.Generator
    optimizer: AdamState
    accountant: AccountantState | None = None
    spectral_iters: int = 1
    _pending: _Pending | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.graph.labels is not None:
            raise ValueError("party A must not hold labels")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def _normalized_layers(self, update: bool) -> tuple[list[PmpLayer], list[float]]:
        sigmas = []
        for layer in self.layers:
            if self.spectral_iters == 0:
                sigmas.append(1.0)
                continue
            sigma, u = power_iteration(layer.weight, layer.u, self.spectral_iters)
            if update:
                layer.u = u
            sigmas.append(sigma)
        return scaled_layers(self.layers, sigmas), sigmas

    def _embed(self, ids, layers, rng):
        batch = sample_neighborhood(self.graph, ids, self.num_layers, self.max_degree, rng)
        h0, enc_cache = self.encoder.forward(self.graph.features[batch.nodes])
        if self.spec.kind is Aggregator.GCN_TRUNCATED:
            stack = truncated_forward(batch, h0, layers, self.spec.d_min, rng)
        else:
            stack = pmp_forward(batch, h0, layers, self.spec, rng)
        return batch, enc_cache, stack

    def forward(self, ids: np.ndarray) -> np.ndarray:
        """Sample, encode and perturb; returns the ``(B, L, d)`` root embeddings."""
        layers, sigmas = self._normalized_layers(update=True)
        batch, enc_cache, stack = self._embed(ids, layers, self.rng)
        self._pending = _Pending(batch, enc_cache, stack, layers, sigmas)
        return stack.root_slice()

    def backward(self, root_grads: np.ndarray) -> None:
        """Apply ``dLoss/dH`` for the pending batch and take one optimizer step."""
        p = self._pending
        if p is None:
            raise RuntimeError("backward called without a pending forward pass")
        self._pending = None
        pg = pmp_backward(p.batch, p.layers, p.stack, root_grads)
        enc_grads, _ = self.encoder.backward(p.enc_cache, pg.h0)

        params, grads = self.params(), {}
        for k, g in enc_grads.items():
            grads[f"enc.{k}"] = g
        for i, (lg, sigma) in enumerate(zip(pg.layers, p.sigmas)):
            for k, g in lg.items():
                # sigma is a constant of the step, so d/dW (W / sigma) = 1 / sigma
                grads[f"pmp{i}.{k}"] = g / sigma if k == "weight" else g
        self.set_params(adam_step(params, grads, self.optimizer))
        if self.accountant is not None:
            self.accountant = compose(self.accountant, 1)

    def infer(self, ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Root embeddings without touching training state."""
        layers, _ = self._normalized_layers(update=False)
        return self._embed(ids, layers, rng)[2].root_slice()

    def params(self) -> dict[str, np.ndarray]:
        p = {f"enc.{k}": v for k, v in self.encoder.params().items()}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                p[f"pmp{i}.{k}"] = v
        return p

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.encoder.set_params({k[4:]: v for k, v in params.items() if k.startswith("enc.")})
        for i, layer in enumerate(self.layers):
            layer.weight = params[f"pmp{i}.weight"]
            if layer.has_truncated_path:
                layer.w_tr = params[f"pmp{i}.w_tr"]
                layer.b_tr = params[f"pmp{i}.b_tr"]


@dataclass
class PartyB:
    labels: np.ndarray
    train_ids: np.ndarray
    decoder: Mlp
    batch_size: int
    rng: np.random.Generator
    optimizer: AdamState

    def sample_batch(self) -> np.ndarray:
        return self.rng.choice(self.train_ids, size=self.batch_size, replace=False)

    def train_step(self, ids: np.ndarray, emb: np.ndarray) -> tuple[float, np.ndarray]:
        """Decode, update the decoder, and return ``(loss, dLoss/dH)`` with ``H`` shaped ``(B, L, d)``."""
        logits, cache = decode_concat(self.decoder, emb)
        loss, g_logits = cross_entropy_loss(logits, self.labels[ids])
        grads, g_emb = decode_concat_backward(self.decoder, cache, g_logits, emb.shape)
        self.decoder.set_params(adam_step(self.decoder.params(), grads, self.optimizer))
        return loss, g_emb

    def predict_proba(self, emb: np.ndarray) -> np.ndarray:
        return softmax(decode_concat(self.decoder, emb)[0])
