"""Building the two parties, a single-process reference loop, evaluation,
and the feature-only MLP baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pmpgraph import accountant as acc
from pmpgraph.engine import PmpLayer, pmp_backward, pmp_forward, power_iteration, truncated_forward
from pmpgraph.graph import Graph, sample_neighborhood
from pmpgraph.neural import AdamState, Mlp, adam_step, cross_entropy_loss, decode_concat, decode_concat_backward, softmax
from pmpgraph.protocol.parties import PartyA, PartyB, scaled_layers
from pmpgraph.protocol.wire import DType
from pmpgraph.seeding import substream
from pmpgraph.sensitivity import Aggregator, AggregatorSpec


@dataclass
class TrainConfig:
    aggregator: str = "gin"
    max_degree: int = 5
    d_min: int = 3
    num_layers: int = 2
    dim: int = 16
    batch_size: int = 16
    steps: int = 300
    lr: float = 1e-3
    theta: float = 0.0
    spectral_iters: int = 1
    dtype: DType = DType.F64
    delta: float | None = None

    @property
    def spec(self) -> AggregatorSpec:
        kind = Aggregator(self.aggregator)
        d_min = None if kind is Aggregator.GIN else self.d_min
        return AggregatorSpec(kind, d_min, tuple(1.0 for _ in range(self.num_layers)))

    def layer_sensitivities(self) -> list[float]:
        """Per-layer bounds with every spectral norm taken to be one."""
        return self.spec.layer_sensitivities()


def privacy_setup(cfg: TrainConfig, n_train: int, num_edges: int) -> tuple[float, float]:
    """``(gamma, delta)`` for a training run; delta defaults to ``1 / |E|``."""
    gamma = acc.sampling_gamma(n_train, cfg.batch_size, cfg.max_degree, cfg.num_layers)
    delta = cfg.delta if cfg.delta is not None else acc.default_delta(num_edges)
    return gamma, delta


def noise_for_budget(cfg: TrainConfig, n_train: int, num_edges: int, target_eps: float) -> float:
    """Noise std meeting ``target_eps`` over ``cfg.steps`` steps; 0 for an infinite budget."""
    if math.isinf(target_eps):
        return 0.0
    gamma, delta = privacy_setup(cfg, n_train, num_edges)
    return acc.calibrate_noise(target_eps, delta, cfg.steps, gamma, cfg.layer_sensitivities())


def _num_classes(labels: np.ndarray) -> int:
    return int(labels.max()) + 1


def init_models(graph: Graph, cfg: TrainConfig, seed: int, num_classes: int):
    rng_a = substream(seed, "init_a")
    encoder = Mlp.init([graph.features.shape[1], cfg.dim, cfg.dim], rng_a)
    truncated = Aggregator(cfg.aggregator) is Aggregator.GCN_TRUNCATED
    layers = [PmpLayer.init(cfg.dim, cfg.theta, rng_a, truncated) for _ in range(cfg.num_layers)]
    decoder = Mlp.init([cfg.num_layers * cfg.dim, cfg.dim, num_classes], substream(seed, "init_b"))
    return encoder, layers, decoder


def build_parties(graph: Graph, cfg: TrainConfig, seed: int) -> tuple[PartyA, PartyB]:
    """Split ``graph`` into party A (structure and features) and party B (labels)."""
    if graph.labels is None:
        raise ValueError("training needs labels")
    encoder, layers, decoder = init_models(graph, cfg, seed, _num_classes(graph.labels))
    graph_a = Graph(graph.num_nodes, graph.adjacency, graph.features, None, graph.train_mask, graph.max_degree_bound)
    accountant = None
    if cfg.theta > 0:
        gamma, delta = privacy_setup(cfg, graph.num_train, graph.num_edges)
        curve = acc.step_curve(cfg.layer_sensitivities(), cfg.theta, gamma)
        accountant = acc.AccountantState(curve, gamma, delta)
    a = PartyA(
        graph=graph_a,
        encoder=encoder,
        layers=layers,
        spec=cfg.spec,
        max_degree=cfg.max_degree,
        rng=substream(seed, "party_a"),
        optimizer=AdamState(lr=cfg.lr),
        accountant=accountant,
        spectral_iters=cfg.spectral_iters,
    )
    b = PartyB(
        labels=graph.labels.copy(),
        train_ids=graph.train_mask.copy(),
        decoder=decoder,
        batch_size=cfg.batch_size,
        rng=substream(seed, "party_b"),
        optimizer=AdamState(lr=cfg.lr),
    )
    return a, b


@dataclass
class ReferenceResult:
    losses: list[float]
    params_a: dict[str, np.ndarray]
    params_b: dict[str, np.ndarray]
    encoder: Mlp = field(repr=False, default=None)
    layers: list[PmpLayer] = field(repr=False, default=None)
    decoder: Mlp = field(repr=False, default=None)


def _wire_cast(x: np.ndarray, dtype: DType) -> np.ndarray:
    return x.astype(dtype.numpy).astype(np.float64)


def train_reference(graph: Graph, cfg: TrainConfig, seed: int) -> ReferenceResult:
    """Single-process training loop with the same seeds and operations as the split run."""
    encoder, layers, decoder = init_models(graph, cfg, seed, _num_classes(graph.labels))
    rng_a, rng_b = substream(seed, "party_a"), substream(seed, "party_b")
    opt_a, opt_b = AdamState(lr=cfg.lr), AdamState(lr=cfg.lr)
    spec = cfg.spec
    losses = []
    for _ in range(cfg.steps):
        ids = rng_b.choice(graph.train_mask, size=cfg.batch_size, replace=False)

        sigmas = []
        for layer in layers:
            if cfg.spectral_iters == 0:
                sigmas.append(1.0)
                continue
            sigma, layer.u = power_iteration(layer.weight, layer.u, cfg.spectral_iters)
            sigmas.append(sigma)
        eff = scaled_layers(layers, sigmas)
        batch = sample_neighborhood(graph, ids, cfg.num_layers, cfg.max_degree, rng_a)
        h0, enc_cache = encoder.forward(graph.features[batch.nodes])
        if spec.kind is Aggregator.GCN_TRUNCATED:
            stack = truncated_forward(batch, h0, eff, spec.d_min, rng_a)
        else:
            stack = pmp_forward(batch, h0, eff, spec, rng_a)
        emb = _wire_cast(stack.root_slice(), cfg.dtype)

        logits, dec_cache = decode_concat(decoder, emb)
        loss, g_logits = cross_entropy_loss(logits, graph.labels[ids])
        dec_grads, g_emb = decode_concat_backward(decoder, dec_cache, g_logits, emb.shape)
        decoder.set_params(adam_step(decoder.params(), dec_grads, opt_b))
        losses.append(loss)

        pg = pmp_backward(batch, eff, stack, _wire_cast(g_emb, cfg.dtype))
        enc_grads, _ = encoder.backward(enc_cache, pg.h0)
        params = {f"enc.{k}": v for k, v in encoder.params().items()}
        grads = {f"enc.{k}": v for k, v in enc_grads.items()}
        for i, layer in enumerate(layers):
            for k, v in layer.params().items():
                params[f"pmp{i}.{k}"] = v
                g = pg.layers[i][k]
                grads[f"pmp{i}.{k}"] = g / sigmas[i] if k == "weight" else g
        new = adam_step(params, grads, opt_a)
        encoder.set_params({k[4:]: v for k, v in new.items() if k.startswith("enc.")})
        for i, layer in enumerate(layers):
            layer.weight = new[f"pmp{i}.weight"]
            if layer.has_truncated_path:
                layer.w_tr, layer.b_tr = new[f"pmp{i}.w_tr"], new[f"pmp{i}.b_tr"]

    params_a = {f"enc.{k}": v for k, v in encoder.params().items()}
    for i, layer in enumerate(layers):
        for k, v in layer.params().items():
            params_a[f"pmp{i}.{k}"] = v
    return ReferenceResult(losses, params_a, decoder.params(), encoder, layers, decoder)


def predict_proba(a: PartyA, b: PartyB, ids: np.ndarray, rng: np.random.Generator, chunk: int = 64) -> np.ndarray:
    """Class probabilities for ``ids`` through the released (perturbed) embeddings."""
    out = []
    for start in range(0, len(ids), chunk):
        part = np.asarray(ids[start : start + chunk])
        out.append(b.predict_proba(a.infer(part, rng)))
    return np.concatenate(out) if out else np.zeros((0, b.decoder.out_dim))


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels)) if labels.size else float("nan")


def train_mlp_baseline(graph: Graph, cfg: TrainConfig, seed: int, eval_ids: np.ndarray) -> float:
    """Feature-only MLP (encoder width, decoder head, no edges); returns accuracy on ``eval_ids``."""
    rng = substream(seed, "init_a")
    n_cls = _num_classes(graph.labels)
    mlp = Mlp.init([graph.features.shape[1], cfg.dim, cfg.dim, cfg.dim, n_cls], rng)
    opt = AdamState(lr=cfg.lr)
    rng_b = substream(seed, "party_b")
    for _ in range(cfg.steps):
        ids = rng_b.choice(graph.train_mask, size=cfg.batch_size, replace=False)
        logits, cache = mlp.forward(graph.features[ids])
        _, g = cross_entropy_loss(logits, graph.labels[ids])
        grads, _ = mlp.backward(cache, g)
        mlp.set_params(adam_step(mlp.params(), grads, opt))
    probs = softmax(mlp.forward(graph.features[eval_ids])[0])
    return accuracy(probs, graph.labels[eval_ids])
