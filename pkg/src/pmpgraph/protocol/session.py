"""Lockstep split-training session between party A and party B.

Message order for a run of ``T`` steps::

    B -> A  STEP_ACK  step 0      handshake: B, d, L, dtype in the header
    A -> B  STEP_ACK  step 0      handshake accepted
    for t in 1..T:
        B -> A  BATCH_IDS  step t
        A -> B  EMB_FWD    step t
        B -> A  GRAD_BWD   step t
        A -> B  STEP_ACK   step t
    B -> A  SHUTDOWN  step T
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from pmpgraph.protocol.parties import PartyA, PartyB
from pmpgraph.protocol.transport import Endpoint, Transcript, inproc_pair, tcp_pair
from pmpgraph.protocol.wire import (
    DType,
    HandshakeError,
    MsgType,
    ProtocolError,
    WireMessage,
    batch_ids_message,
    tensor_block,
    tensor_message,
)


@dataclass(frozen=True)
class SessionConfig:
    batch_size: int
    dim: int
    num_layers: int
    dtype: DType = DType.F64

    def hello(self) -> WireMessage:
        return WireMessage(MsgType.STEP_ACK, 0, self.batch_size, self.dim, self.num_layers, self.dtype)

    def matches(self, msg: WireMessage) -> bool:
        return (msg.rows, msg.dim, msg.layers, msg.dtype) == (
            self.batch_size,
            self.dim,
            self.num_layers,
            self.dtype,
        )


def _expect(chan: Endpoint, msg_type: MsgType, step: int) -> WireMessage:
    msg = chan.recv()
    if msg.msg_type is MsgType.SHUTDOWN and msg_type is not MsgType.SHUTDOWN:
        raise ProtocolError(f"peer shut down while waiting for {msg_type.name} at step {step}")
    if msg.msg_type is not msg_type:
        raise ProtocolError(f"expected {msg_type.name} at step {step}, got {msg.msg_type.name}")
    if msg.step != step:
        raise ProtocolError(f"out-of-order {msg_type.name}: expected step {step}, got {msg.step}")
    return msg


def _check_tensor(msg: WireMessage, cfg: SessionConfig) -> None:
    if not cfg.matches(msg):
        raise ProtocolError(
            f"{msg.msg_type.name} shape ({msg.rows}, {msg.dim}, {msg.layers}, {msg.dtype.name}) "
            f"does not match session ({cfg.batch_size}, {cfg.dim}, {cfg.num_layers}, {cfg.dtype.name})"
        )


def _abort(chan: Endpoint, step: int) -> None:
    try:
        chan.send(WireMessage(MsgType.SHUTDOWN, step))
    except Exception:
        pass


def party_a_handshake(chan: Endpoint, cfg: SessionConfig) -> None:
    hello = _expect(chan, MsgType.STEP_ACK, 0)
    if not cfg.matches(hello):
        _abort(chan, 0)
        raise HandshakeError(
            f"peer proposed (B={hello.rows}, d={hello.dim}, L={hello.layers}, {hello.dtype.name}); "
            f"party A runs (B={cfg.batch_size}, d={cfg.dim}, L={cfg.num_layers}, {cfg.dtype.name})"
        )
    chan.send(cfg.hello())


def party_b_handshake(chan: Endpoint, cfg: SessionConfig) -> None:
    chan.send(cfg.hello())
    reply = chan.recv()
    if reply.msg_type is not MsgType.STEP_ACK or reply.step != 0 or not cfg.matches(reply):
        raise HandshakeError("party A rejected the session parameters")


def party_a_step(a: PartyA, chan: Endpoint, cfg: SessionConfig, step: int) -> bool:
    """Serve one training step; returns False when the peer sent SHUTDOWN."""
    msg = chan.recv()
    if msg.msg_type is MsgType.SHUTDOWN:
        return False
    if msg.msg_type is not MsgType.BATCH_IDS or msg.step != step:
        raise ProtocolError(f"expected BATCH_IDS at step {step}, got {msg.msg_type.name} at step {msg.step}")
    if msg.rows != cfg.batch_size:
        raise ProtocolError(f"batch of {msg.rows} ids, session batch size is {cfg.batch_size}")
    ids = msg.payload.astype(np.int64)
    emb = a.forward(ids)
    chan.send(tensor_message(MsgType.EMB_FWD, step, emb, cfg.dtype))
    grad = _expect(chan, MsgType.GRAD_BWD, step)
    _check_tensor(grad, cfg)
    a.backward(tensor_block(grad))
    chan.send(WireMessage(MsgType.STEP_ACK, step))
    return True


def party_b_step(b: PartyB, chan: Endpoint, cfg: SessionConfig, step: int) -> float:
    ids = b.sample_batch()
    chan.send(batch_ids_message(step, ids, cfg.dim, cfg.num_layers, cfg.dtype))
    emb_msg = _expect(chan, MsgType.EMB_FWD, step)
    _check_tensor(emb_msg, cfg)
    loss, g_emb = b.train_step(ids, tensor_block(emb_msg))
    chan.send(tensor_message(MsgType.GRAD_BWD, step, g_emb, cfg.dtype))
    _expect(chan, MsgType.STEP_ACK, step)
    return loss


def run_party_a(a: PartyA, chan: Endpoint, cfg: SessionConfig) -> int:
    """Party A's actor loop; returns the number of steps served."""
    step = 0
    try:
        party_a_handshake(chan, cfg)
        while party_a_step(a, chan, cfg, step + 1):
            step += 1
    except Exception:
        _abort(chan, step)
        raise
    return step


def run_party_b(b: PartyB, chan: Endpoint, cfg: SessionConfig, steps: int) -> list[float]:
    losses = []
    try:
        party_b_handshake(chan, cfg)
        for t in range(1, steps + 1):
            losses.append(party_b_step(b, chan, cfg, t))
        chan.send(WireMessage(MsgType.SHUTDOWN, steps))
    except Exception:
        _abort(chan, len(losses))
        raise
    return losses


@dataclass
class SessionResult:
    losses: list[float]
    transcript: Transcript


def _run_actors(a_fn, b_fn):
    results: dict = {}

    def wrap(name, fn):
        try:
            results[name] = fn()
        except BaseException as exc:
            results[name + "_err"] = exc

    ta = threading.Thread(target=wrap, args=("a", a_fn), daemon=True)
    ta.start()
    wrap("b", b_fn)
    ta.join()
    for key in ("a_err", "b_err"):
        if key in results:
            raise results[key]
    return results


def run_session(
    a: PartyA,
    b: PartyB,
    steps: int,
    transport: str = "inproc",
    dtype: DType = DType.F64,
    addr: tuple[str, int] = ("127.0.0.1", 0),
) -> SessionResult:
    """Run ``steps`` lockstep training steps with each party as its own actor thread."""
    cfg = SessionConfig(b.batch_size, a.dim, a.num_layers, dtype)
    transcript = Transcript()
    if transport == "inproc":
        chan_a, chan_b = inproc_pair(transcript)
    elif transport == "tcp":
        chan_a, chan_b = tcp_pair(addr[0], addr[1], transcript)
    else:
        raise ValueError(f"unknown transport {transport!r}")
    try:
        res = _run_actors(lambda: run_party_a(a, chan_a, cfg), lambda: run_party_b(b, chan_b, cfg, steps))
    finally:
        chan_a.close()
        chan_b.close()
    return SessionResult(res["b"], transcript)


def run_training_step(a: PartyA, b: PartyB, chan_a: Endpoint, chan_b: Endpoint, cfg: SessionConfig, step: int) -> float:
    """One lockstep exchange on an already handshaken channel pair; returns B's loss."""
    res = _run_actors(lambda: party_a_step(a, chan_a, cfg, step), lambda: party_b_step(b, chan_b, cfg, step))
    return res["b"]
