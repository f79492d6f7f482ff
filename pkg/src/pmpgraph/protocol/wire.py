"""Bit-exact framing for messages exchanged between the two parties.

Header (little-endian, 23 bytes)::

    magic    4s   b"VSPR"
    version  u8
    msg_type u8   1=EMB_FWD 2=GRAD_BWD 3=STEP_ACK 4=BATCH_IDS 5=SHUTDOWN
    step     u32
    rows     u32  B
    dim      u32  d
    layers   u32  L
    dtype    u8   0=f32 1=f64

Tensor payloads are the ``B x d x L`` block in row-major order. BATCH_IDS
carries ``B`` u32 node ids; STEP_ACK and SHUTDOWN carry nothing.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"VSPR"
VERSION = 1
HEADER = struct.Struct("<4sBBIIIIB")
LENGTH_PREFIX = struct.Struct(">I")


class MsgType(enum.IntEnum):
    EMB_FWD = 1
    GRAD_BWD = 2
    STEP_ACK = 3
    BATCH_IDS = 4
    SHUTDOWN = 5


class DType(enum.IntEnum):
    F32 = 0
    F64 = 1

    @property
    def numpy(self) -> np.dtype:
        return np.dtype("<f4") if self is DType.F32 else np.dtype("<f8")

    @property
    def itemsize(self) -> int:
        return 4 if self is DType.F32 else 8


TENSOR_TYPES = (MsgType.EMB_FWD, MsgType.GRAD_BWD)


class ProtocolError(RuntimeError):
    pass


class HandshakeError(ProtocolError):
    pass


class WireError(ProtocolError):
    """Malformed bytes; ``offset`` points at the first offending byte."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class UnknownMessageType(WireError):
    pass


class UnknownDType(WireError):
    pass


class Truncated(WireError):
    def __init__(self, expected: int, actual: int, offset: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated message: expected {expected} bytes, got {actual}", offset)


class TrailingBytes(WireError):
    pass


@dataclass(frozen=True, eq=False)
class WireMessage:
    msg_type: MsgType
    step: int
    rows: int = 0
    dim: int = 0
    layers: int = 0
    dtype: DType = DType.F64
    payload: np.ndarray | None = None

    def payload_nbytes(self) -> int:
        return payload_length(self.msg_type, self.rows, self.dim, self.layers, self.dtype)

    def __eq__(self, other):
        if not isinstance(other, WireMessage):
            return NotImplemented
        head = (self.msg_type, self.step, self.rows, self.dim, self.layers, self.dtype)
        if head != (other.msg_type, other.step, other.rows, other.dim, other.layers, other.dtype):
            return False
        if self.payload is None or other.payload is None:
            return self.payload is None and other.payload is None
        return self.payload.shape == other.payload.shape and np.array_equal(self.payload, other.payload)


def payload_length(msg_type: MsgType, rows: int, dim: int, layers: int, dtype: DType) -> int:
    if msg_type in TENSOR_TYPES:
        return rows * dim * layers * DType(dtype).itemsize
    if msg_type is MsgType.BATCH_IDS:
        return rows * 4
    return 0


def tensor_message(msg_type: MsgType, step: int, block: np.ndarray, dtype: DType) -> WireMessage:
    """Wrap a ``(B, L, d)`` array as a ``B x d x L`` wire tensor."""
    b, n_layers, d = block.shape
    payload = np.ascontiguousarray(np.transpose(block, (0, 2, 1)), dtype=dtype.numpy)
    return WireMessage(msg_type, step, b, d, n_layers, dtype, payload)


def tensor_block(msg: WireMessage) -> np.ndarray:
    """Inverse of :func:`tensor_message`: back to ``(B, L, d)`` float64."""
    return np.transpose(msg.payload, (0, 2, 1)).astype(np.float64)


def batch_ids_message(step: int, ids: np.ndarray, dim: int, layers: int, dtype: DType) -> WireMessage:
    ids = np.asarray(ids, dtype="<u4")
    return WireMessage(MsgType.BATCH_IDS, step, ids.size, dim, layers, dtype, ids)


def serialize(msg: WireMessage) -> bytes:
    header = HEADER.pack(
        MAGIC, VERSION, int(msg.msg_type), msg.step, msg.rows, msg.dim, msg.layers, int(msg.dtype)
    )
    expected = msg.payload_nbytes()
    if msg.msg_type in TENSOR_TYPES:
        body = np.ascontiguousarray(msg.payload, dtype=msg.dtype.numpy).tobytes()
    elif msg.msg_type is MsgType.BATCH_IDS:
        body = np.ascontiguousarray(msg.payload, dtype="<u4").tobytes()
    else:
        body = b""
    if len(body) != expected:
        raise ProtocolError(f"payload has {len(body)} bytes, header declares {expected}")
    return header + body


def deserialize(data: bytes) -> WireMessage:
    if len(data) < HEADER.size:
        raise Truncated(HEADER.size, len(data), len(data))
    magic, version, mtype, step, rows, dim, layers, dtype = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}", 4)
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise UnknownMessageType(f"unknown message type {mtype}", 5) from None
    try:
        dtype = DType(dtype)
    except ValueError:
        raise UnknownDType(f"unknown dtype code {dtype}", 22) from None
    expected = payload_length(mtype, rows, dim, layers, dtype)
    body = memoryview(data)[HEADER.size:]
    if len(body) < expected:
        raise Truncated(HEADER.size + expected, len(data), len(data))
    if len(body) > expected:
        raise TrailingBytes(f"{len(body) - expected} bytes after payload", HEADER.size + expected)
    payload = None
    if mtype in TENSOR_TYPES:
        payload = np.frombuffer(body, dtype=dtype.numpy).reshape(rows, dim, layers).copy()
    elif mtype is MsgType.BATCH_IDS:
        payload = np.frombuffer(body, dtype="<u4").copy()
    return WireMessage(mtype, step, rows, dim, layers, dtype, payload)


def frame(data: bytes) -> bytes:
    """Prefix a serialized message with its u32 big-endian length."""
    return LENGTH_PREFIX.pack(len(data)) + data


def iter_frames(blob: bytes):
    """Split a concatenation of length-prefixed frames back into messages."""
    pos = 0
    while pos < len(blob):
        if pos + LENGTH_PREFIX.size > len(blob):
            raise Truncated(LENGTH_PREFIX.size, len(blob) - pos, pos)
        (n,) = LENGTH_PREFIX.unpack_from(blob, pos)
        pos += LENGTH_PREFIX.size
        if pos + n > len(blob):
            raise Truncated(n, len(blob) - pos, pos)
        yield deserialize(blob[pos : pos + n])
        pos += n
