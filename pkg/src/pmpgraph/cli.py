"""Command-line entry points: calibrate, train, histogram, attack, sensitivity, gen-data.

Configuration is a flat ``key = value`` file; ``--set key=value`` and the
dedicated flags override it. Every artifact records the SHA-256 of the
resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from pmpgraph import accountant as acc
from pmpgraph import checkpoint
from pmpgraph.analytics import entropy_mia, private_degree_histogram
from pmpgraph.errors import CalibrationError, ConfigError, GraphFormatError
from pmpgraph.graph import Graph, generate_sbm, load_graph, save_graph
from pmpgraph.protocol.audit import audit_transcript
from pmpgraph.protocol.session import SessionConfig, run_session
from pmpgraph.protocol.wire import DType, ProtocolError
from pmpgraph.seeding import substream
from pmpgraph.sensitivity import (
    Aggregator,
    AggregatorSpec,
    brute_force_edge_sensitivity,
)
from pmpgraph.training import TrainConfig, accuracy, build_parties, predict_proba

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_CALIBRATION = 0, 2, 3, 4


@dataclass
class RunConfig:
    # graph source: files when ``edges`` is set, otherwise a two-block SBM
    edges: str = ""
    features: str = ""
    labels: str = ""
    sbm_blocks: str = "150,150"
    sbm_p_in: float = 0.25
    sbm_p_out: float = 0.02
    sbm_feature_dim: int = 8
    sbm_shift: float = 1.0
    # model and training
    aggregator: str = "gin"
    max_degree: int = 2
    d_min: int = 3
    layers: int = 2
    dim: int = 16
    batch_size: int = 1
    steps: int = 300
    lr: float = 5e-3
    spectral_iters: int = 1
    dtype: str = "f64"
    train_fraction: float = 0.8
    member_fraction: float = 0.5
    # privacy
    epsilon: float = math.inf
    delta: float = 0.0
    hist_epsilon: float = 0.1
    hist_cap: int = 50
    # run
    seed: int = 0
    transport: str = "inproc"
    addr: str = "127.0.0.1:0"
    out: str = "out"

    def validate(self) -> None:
        try:
            Aggregator(self.aggregator)
        except ValueError:
            raise ConfigError(f"aggregator must be one of {[a.value for a in Aggregator]}") from None
        if self.transport not in ("inproc", "tcp"):
            raise ConfigError("transport must be inproc or tcp")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be f32 or f64")
        for name in ("max_degree", "layers", "dim", "batch_size", "steps", "hist_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.aggregator == Aggregator.GCN_TRUNCATED.value and self.d_min < 2:
            raise ConfigError("d_min must be >= 2 for truncated GCN")
        if not (self.epsilon > 0) or not (self.hist_epsilon > 0):
            raise ConfigError("epsilon values must be positive (use inf for no noise)")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta must lie in [0, 1); 0 selects 1/|E|")
        for name in ("train_fraction", "member_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        self.host_port()
        self.block_sizes()

    def block_sizes(self) -> list[int]:
        try:
            sizes = [int(x) for x in self.sbm_blocks.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sbm_blocks must be comma-separated integers, got {self.sbm_blocks!r}") from None
        if not sizes or min(sizes) < 1:
            raise ConfigError("sbm_blocks needs at least one positive block size")
        return sizes

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.addr.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"addr must be host:port, got {self.addr!r}")
        return host, int(port)

    def canonical(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            aggregator=self.aggregator,
            max_degree=self.max_degree,
            d_min=self.d_min,
            num_layers=self.layers,
            dim=self.dim,
            batch_size=self.batch_size,
            steps=self.steps,
            lr=self.lr,
            spectral_iters=self.spectral_iters,
            dtype=DType.F32 if self.dtype == "f32" else DType.F64,
            delta=self.delta or None,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_pairs(lines, source: str) -> dict:
    values = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        values.update(parse_pairs(text.splitlines(), args.config))
    values.update(parse_pairs(args.set or [], "--set"))
    for key in ("seed", "out", "transport", "addr"):
        if getattr(args, key, None) is not None:
            values[key] = _coerce(key, str(getattr(args, key)))
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def build_graph(cfg: RunConfig) -> Graph:
    if cfg.edges:
        if not cfg.features:
            raise ConfigError("features path is required with edges")
        return load_graph(cfg.edges, cfg.features, cfg.labels or None)
    return generate_sbm(
        cfg.block_sizes(), cfg.sbm_p_in, cfg.sbm_p_out, cfg.sbm_feature_dim, cfg.sbm_shift, substream(cfg.seed, "data")
    )


def _split(graph: Graph, seed: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    pool = graph.train_mask
    perm = substream(seed, "split").permutation(pool.size)
    k = int(round(fraction * pool.size))
    return np.sort(pool[perm[:k]]), np.sort(pool[perm[k:]])


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        raise TypeError(type(o).__name__)

    path.write_text(json.dumps(payload, indent=2, default=default) + "\n", encoding="utf-8")


def _theta_for(cfg: RunConfig, tc: TrainConfig, n_train: int, num_edges: int) -> float:
    if math.isinf(cfg.epsilon):
        return 0.0
    gamma = acc.sampling_gamma(n_train, tc.batch_size, tc.max_degree, tc.num_layers)
    delta = tc.delta if tc.delta is not None else acc.default_delta(num_edges)
    return acc.calibrate_noise(cfg.epsilon, delta, tc.steps, gamma, tc.layer_sensitivities())


def cmd_calibrate(cfg: RunConfig) -> dict:
    graph = build_graph(cfg)
    train, _ = _split(graph, cfg.seed, cfg.train_fraction)
    tc = cfg.train_config()
    theta = _theta_for(cfg, tc, train.size, graph.num_edges)
    gamma = acc.sampling_gamma(train.size, tc.batch_size, tc.max_degree, tc.num_layers)
    delta = tc.delta if tc.delta is not None else acc.default_delta(graph.num_edges)
    report = acc.budget_report(theta, tc.steps, gamma, delta, tc.layer_sensitivities())
    report.update(target_eps=cfg.epsilon, steps=tc.steps, n_train=int(train.size), config_hash=cfg.config_hash())
    _write_json(_out_dir(cfg) / "calibrate.json", report)
    return report


def _labelled(graph: Graph) -> Graph:
    if graph.labels is None:
        raise ConfigError("this command needs node labels")
    return graph


def cmd_train(cfg: RunConfig) -> dict:
    graph = _labelled(build_graph(cfg))
    train, test = _split(graph, cfg.seed, cfg.train_fraction)
    graph = graph.with_train_mask(train)
    tc = cfg.train_config()
    tc.theta = _theta_for(cfg, tc, train.size, graph.num_edges)
    a, b = build_parties(graph, tc, cfg.seed)
    result = run_session(a, b, tc.steps, cfg.transport, tc.dtype, cfg.host_port())

    out = _out_dir(cfg)
    digest = cfg.config_hash()
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for t, loss in enumerate(result.losses, 1):
            w.writerow([t, repr(float(loss))])
    result.transcript.dump(out / "transcript.bin")
    report = audit_transcript(result.transcript.messages(), SessionConfig(tc.batch_size, tc.dim, tc.num_layers, tc.dtype))
    rng = substream(cfg.seed, "eval")
    train_acc = accuracy(predict_proba(a, b, train, rng), graph.labels[train])
    test_acc = accuracy(predict_proba(a, b, test, rng), graph.labels[test]) if test.size else float("nan")
    eps, alpha = a.accountant.epsilon() if a.accountant is not None else (math.inf, None)
    delta = a.accountant.delta if a.accountant is not None else tc.delta or acc.default_delta(graph.num_edges)
    checkpoint.save(checkpoint.from_parties(a, b, {"config_hash": digest}), out / "model.pmpk")
    summary = {
        "config_hash": digest,
        "theta": tc.theta,
        "steps": tc.steps,
        "final_loss": float(result.losses[-1]) if result.losses else None,
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "epsilon": eps,
        "best_alpha": alpha,
        "delta": delta,
        "audit_violations": report.violations,
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_histogram(cfg: RunConfig) -> dict:
    graph = build_graph(cfg)
    hist = private_degree_histogram(graph, cfg.hist_epsilon, cfg.hist_cap, substream(cfg.seed, "histogram"))
    path = _out_dir(cfg) / "histogram.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "noisy_count"])
        for deg, count in enumerate(hist.bins):
            w.writerow([deg, repr(float(count))])
    summary = {"epsilon": hist.epsilon, "scale": hist.scale, "cap": hist.cap, "bins": len(hist.bins), "config_hash": cfg.config_hash()}
    _write_json(_out_dir(cfg) / "histogram.json", summary)
    return summary


def cmd_attack(cfg: RunConfig) -> dict:
    """Train on the subgraph induced by a random member set, then attack on the full graph."""
    graph = _labelled(build_graph(cfg))
    members, others = _split(graph, cfg.seed, cfg.member_fraction)
    sub, _ = graph.subgraph(members)
    tc = cfg.train_config()
    tc.theta = _theta_for(cfg, tc, sub.num_train, sub.num_edges)
    a, b = build_parties(sub, tc, cfg.seed)
    run_session(a, b, tc.steps, cfg.transport, tc.dtype, cfg.host_port())
    a.graph = dataclasses.replace(graph, labels=None)
    rng = substream(cfg.seed, "eval")
    res = entropy_mia(predict_proba(a, b, members, rng), predict_proba(a, b, others, rng))

    out = _out_dir(cfg)
    rows = [(int(v), s, 1) for v, s in zip(members, res.member_scores)]
    rows += [(int(v), s, 0) for v, s in zip(others, res.nonmember_scores)]
    with open(out / "attack.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "score", "is_member"])
        for v, s, m in sorted(rows):
            w.writerow([v, repr(float(s)), m])
    summary = {"auc": res.auc, "theta": tc.theta, "members": int(members.size), "config_hash": cfg.config_hash()}
    _write_json(out / "attack.json", summary)
    return summary


def cmd_sensitivity(cfg: RunConfig) -> dict:
    """Closed-form layer bound against the exhaustive oracle with ``W = I`` on normalized features."""
    graph = build_graph(cfg)
    kind = Aggregator(cfg.aggregator)
    d_min = None if kind is Aggregator.GIN else cfg.d_min
    spec = AggregatorSpec(kind, d_min, (1.0,))
    dim = graph.features.shape[1]
    norms = np.linalg.norm(graph.features, axis=1, keepdims=True)
    inputs = np.where(norms > 0, graph.features / np.where(norms > 0, norms, 1.0), 0.0)
    truncated = None
    if kind is Aggregator.GCN_TRUNCATED:
        rng = substream(cfg.seed, "init_a")
        w_tr = rng.standard_normal((dim, dim))
        truncated = (w_tr / np.linalg.norm(w_tr, 2), np.zeros(dim))
    oracle = brute_force_edge_sensitivity(graph, spec, np.eye(dim), inputs, truncated)
    bound = spec.layer_sensitivities()[0]
    degrees = graph.degrees
    summary = {
        "aggregator": kind.value,
        "d_min": d_min,
        "bound": bound,
        "oracle": oracle,
        "num_edges": graph.num_edges,
        "min_degree": int(degrees.min()) if degrees.size else 0,
        "config_hash": cfg.config_hash(),
    }
    if kind is not Aggregator.GIN and summary["min_degree"] < cfg.d_min:
        summary["note"] = "graph minimum degree is below d_min; the bound assumes otherwise"
    _write_json(_out_dir(cfg) / "sensitivity.json", summary)
    return summary


def cmd_gen_data(cfg: RunConfig) -> dict:
    graph = generate_sbm(
        cfg.block_sizes(), cfg.sbm_p_in, cfg.sbm_p_out, cfg.sbm_feature_dim, cfg.sbm_shift, substream(cfg.seed, "data")
    )
    out = _out_dir(cfg)
    save_graph(graph, out / "edges.tsv", out / "features.csv", out / "labels.csv")
    summary = {"nodes": graph.num_nodes, "edges": graph.num_edges, "config_hash": cfg.config_hash()}
    _write_json(out / "gen-data.json", summary)
    return summary


COMMANDS = {
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "histogram": cmd_histogram,
    "attack": cmd_attack,
    "sensitivity": cmd_sensitivity,
    "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmpgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--transport", choices=["inproc", "tcp"])
        p.add_argument("--addr", help="host:port for the TCP transport")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](cfg)
    except (ConfigError, GraphFormatError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    print(json.dumps(summary, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
