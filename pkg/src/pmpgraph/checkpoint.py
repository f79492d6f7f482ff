"""Binary checkpoint container for the message-passing layers plus named extra sections.

Layout (all little-endian)::

    header   "PMPK" u16 version  u32 L  u32 d  u8 aggregator  u32 d_min (0 = none)
    layers   for each layer: W (d*d f64, row-major); if truncated, W_tr (d*d) then b_tr (d)
    u32      number of sections
    section  u16 name length, utf-8 name, u8 kind
             kind 0: u32 rows, u32 cols, rows*cols f64 row-major
             kind 1: u32 byte length, utf-8 text
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pmpgraph.sensitivity import Aggregator

MAGIC = b"PMPK"
VERSION = 1
_HEADER = struct.Struct("<4sHIIBI")
_AGG_CODES = {Aggregator.GIN: 0, Aggregator.GCN: 1, Aggregator.GCN_TRUNCATED: 2}
_AGG_FROM_CODE = {v: k for k, v in _AGG_CODES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    aggregator: Aggregator
    d_min: int | None
    weights: list[np.ndarray]
    truncated: list[tuple[np.ndarray, np.ndarray]] | None = None
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    text: dict[str, str] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0] if self.weights else 0


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(ckpt: Checkpoint) -> bytes:
    kind = Aggregator(ckpt.aggregator)
    d = ckpt.dim
    if any(w.shape != (d, d) for w in ckpt.weights):
        raise CheckpointError("all layer weights must be d x d")
    is_trunc = kind is Aggregator.GCN_TRUNCATED
    if is_trunc and (ckpt.truncated is None or len(ckpt.truncated) != ckpt.num_layers):
        raise CheckpointError("truncated GCN checkpoints need W_tr and b_tr for every layer")
    out = [_HEADER.pack(MAGIC, VERSION, ckpt.num_layers, d, _AGG_CODES[kind], ckpt.d_min or 0)]
    for i, w in enumerate(ckpt.weights):
        out.append(_f64(w))
        if is_trunc:
            w_tr, b_tr = ckpt.truncated[i]
            out.append(_f64(w_tr))
            out.append(_f64(b_tr))
    out.append(struct.pack("<I", len(ckpt.tensors) + len(ckpt.text)))
    for name, arr in ckpt.tensors.items():
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        if arr.ndim != 2:
            raise CheckpointError(f"section {name!r} must be at most 2-D")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BII", 0, *arr.shape))
        out.append(_f64(arr))
    for name, value in ckpt.text.items():
        raw, body = name.encode("utf-8"), value.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BI", 1, len(body)) + body)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic, version, n_layers, d, code, d_min = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if code not in _AGG_FROM_CODE:
        raise CheckpointError(f"unknown aggregator code {code}")
    kind = _AGG_FROM_CODE[code]
    weights, truncated = [], [] if kind is Aggregator.GCN_TRUNCATED else None
    for _ in range(n_layers):
        weights.append(r.matrix(d, d))
        if truncated is not None:
            truncated.append((r.matrix(d, d), r.matrix(1, d)[0]))
    (n_sections,) = r.unpack("<I")
    tensors, text = {}, {}
    for _ in range(n_sections):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (kind_byte,) = r.unpack("<B")
        if kind_byte == 0:
            rows, cols = r.unpack("<II")
            tensors[name] = r.matrix(rows, cols)
        elif kind_byte == 1:
            (length,) = r.unpack("<I")
            text[name] = r.take(length).decode("utf-8")
        else:
            raise CheckpointError(f"unknown section kind {kind_byte}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last section")
    return Checkpoint(kind, d_min or None, weights, truncated, tensors, text)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def from_parties(a, b, meta: dict[str, str] | None = None) -> Checkpoint:
    """Snapshot both parties' parameters; vectors are stored as 1 x n sections."""
    tensors = {f"enc.{k}": v for k, v in a.encoder.params().items()}
    tensors.update({f"dec.{k}": v for k, v in b.decoder.params().items()})
    for i, layer in enumerate(a.layers):
        tensors[f"pmp{i}.u"] = layer.u
        tensors[f"pmp{i}.theta"] = np.array([[layer.theta]])
    truncated = None
    if a.spec.kind is Aggregator.GCN_TRUNCATED:
        truncated = [(l.w_tr, l.b_tr) for l in a.layers]
    return Checkpoint(a.spec.kind, a.spec.d_min, [l.weight for l in a.layers], truncated, tensors, dict(meta or {}))


def restore_parties(ckpt: Checkpoint, a, b) -> None:
    """Load a snapshot written by :func:`from_parties` into existing parties of matching shape."""
    if ckpt.num_layers != a.num_layers or ckpt.dim != a.dim:
        raise CheckpointError(f"checkpoint is L={ckpt.num_layers}, d={ckpt.dim}; model is L={a.num_layers}, d={a.dim}")

    def section(prefix: str, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for k, v in like.items():
            arr = ckpt.tensors.get(f"{prefix}.{k}")
            if arr is None or arr.size != v.size:
                raise CheckpointError(f"missing or misshapen section {prefix}.{k}")
            out[k] = arr.reshape(v.shape).copy()
        return out

    a.encoder.set_params(section("enc", a.encoder.params()))
    b.decoder.set_params(section("dec", b.decoder.params()))
    for i, layer in enumerate(a.layers):
        layer.weight = ckpt.weights[i].copy()
        layer.u = ckpt.tensors[f"pmp{i}.u"].reshape(-1).copy()
        layer.theta = float(ckpt.tensors[f"pmp{i}.theta"][0, 0])
        if ckpt.truncated is not None:
            layer.w_tr, layer.b_tr = (x.copy() for x in ckpt.truncated[i])
