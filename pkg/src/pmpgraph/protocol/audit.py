"""Transcript checks: only the expected message types, shapes and step order."""

from __future__ import annotations

from dataclasses import dataclass, field

from pmpgraph.protocol.session import SessionConfig
from pmpgraph.protocol.wire import MsgType, WireMessage, payload_length

# per step, in order, after the two handshake frames
STEP_PATTERN = (MsgType.BATCH_IDS, MsgType.EMB_FWD, MsgType.GRAD_BWD, MsgType.STEP_ACK)


@dataclass
class AuditReport:
    num_messages: int
    steps: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_transcript(transcript: list[WireMessage], cfg: SessionConfig) -> AuditReport:
    """Check a complete transcript against the session shape and lockstep order."""
    report = AuditReport(len(transcript), 0)
    v = report.violations

    def shape_ok(i: int, msg: WireMessage) -> None:
        if msg.msg_type in (MsgType.EMB_FWD, MsgType.GRAD_BWD):
            if (msg.rows, msg.dim, msg.layers, msg.dtype) != (cfg.batch_size, cfg.dim, cfg.num_layers, cfg.dtype):
                v.append(
                    f"msg {i}: {msg.msg_type.name} shape ({msg.rows}x{msg.dim}x{msg.layers}, {msg.dtype.name}) "
                    f"!= ({cfg.batch_size}x{cfg.dim}x{cfg.num_layers}, {cfg.dtype.name})"
                )
        elif msg.msg_type is MsgType.BATCH_IDS and msg.rows != cfg.batch_size:
            v.append(f"msg {i}: BATCH_IDS carries {msg.rows} ids, expected {cfg.batch_size}")
        expected = payload_length(msg.msg_type, msg.rows, msg.dim, msg.layers, msg.dtype)
        actual = 0 if msg.payload is None else msg.payload.nbytes
        if actual != expected:
            v.append(f"msg {i}: payload {actual} bytes, header declares {expected}")

    msgs = list(transcript)
    for i, msg in enumerate(msgs):
        if not isinstance(msg.msg_type, MsgType):
            v.append(f"msg {i}: disallowed message type {msg.msg_type!r}")

    if len(msgs) < 2 or any(m.msg_type is not MsgType.STEP_ACK or m.step != 0 for m in msgs[:2]):
        v.append("missing step-0 handshake")
    else:
        for i in (0, 1):
            if not cfg.matches(msgs[i]):
                v.append(f"msg {i}: handshake parameters differ from the session")

    body = msgs[2:]
    if not body or body[-1].msg_type is not MsgType.SHUTDOWN:
        v.append("transcript does not end with SHUTDOWN")
    else:
        body = body[:-1]

    expected_step = 1
    pos = 0
    while pos < len(body):
        chunk = body[pos : pos + len(STEP_PATTERN)]
        types = tuple(m.msg_type for m in chunk)
        if types != STEP_PATTERN[: len(chunk)] or len(chunk) < len(STEP_PATTERN):
            got = ", ".join(t.name for t in types)
            v.append(f"step {expected_step}: expected {'/'.join(t.name for t in STEP_PATTERN)}, got {got}")
        # resynchronize on the next BATCH_IDS so one gap is reported once
        nxt = len(chunk)
        for j in range(1, len(chunk)):
            if chunk[j].msg_type is MsgType.BATCH_IDS:
                nxt = j
                break
        for j, msg in enumerate(chunk[:nxt]):
            shape_ok(pos + 2 + j, msg)
            if msg.step != expected_step:
                v.append(f"msg {pos + 2 + j}: step {msg.step}, expected contiguous step {expected_step}")
        pos += nxt
        expected_step += 1
    report.steps = expected_step - 1
    if msgs and msgs[-1].msg_type is MsgType.SHUTDOWN and msgs[-1].step != report.steps:
        v.append(f"SHUTDOWN at step {msgs[-1].step}, expected {report.steps}")
    return report
