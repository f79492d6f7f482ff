"""Two-party split-training protocol: wire format, transports, actors, audit."""

from pmpgraph.protocol.audit import AuditReport, audit_transcript
from pmpgraph.protocol.parties import PartyA, PartyB
from pmpgraph.protocol.session import SessionConfig, run_session, run_training_step
from pmpgraph.protocol.transport import Transcript, inproc_pair, tcp_pair
from pmpgraph.protocol.wire import DType, MsgType, WireMessage, deserialize, serialize

__all__ = [
    "AuditReport",
    "audit_transcript",
    "PartyA",
    "PartyB",
    "SessionConfig",
    "run_session",
    "run_training_step",
    "Transcript",
    "inproc_pair",
    "tcp_pair",
    "DType",
    "MsgType",
    "WireMessage",
    "serialize",
    "deserialize",
]
