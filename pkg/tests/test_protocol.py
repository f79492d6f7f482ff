import dataclasses
import struct

import numpy as np
import pytest

from pmpgraph.graph import generate_sbm
from pmpgraph.protocol.audit import audit_transcript
from pmpgraph.protocol.parties import PartyB
from pmpgraph.protocol.session import (
    SessionConfig,
    party_a_handshake,
    party_b_handshake,
    run_party_a,
    run_session,
)
from pmpgraph.protocol.transport import Transcript, inproc_pair, tcp_pair
from pmpgraph.protocol.wire import (
    HEADER,
    BadMagic,
    DType,
    HandshakeError,
    MsgType,
    ProtocolError,
    TrailingBytes,
    Truncated,
    UnknownDType,
    UnknownMessageType,
    UnsupportedVersion,
    WireMessage,
    batch_ids_message,
    deserialize,
    frame,
    iter_frames,
    serialize,
    tensor_block,
    tensor_message,
)
from pmpgraph.training import TrainConfig, build_parties, train_reference


def random_message(rng):
    kind = MsgType(int(rng.integers(1, 6)))
    dtype = DType(int(rng.integers(0, 2)))
    step = int(rng.integers(0, 2**32))
    if kind in (MsgType.EMB_FWD, MsgType.GRAD_BWD):
        block = rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 7))))
        return tensor_message(kind, step, block, dtype)
    if kind is MsgType.BATCH_IDS:
        ids = rng.integers(0, 2**32, size=int(rng.integers(0, 9)), dtype=np.uint64)
        return batch_ids_message(step, ids, 3, 2, dtype)
    return WireMessage(kind, step, int(rng.integers(0, 9)), int(rng.integers(0, 9)), int(rng.integers(0, 9)), dtype)


class TestWire:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            msg = random_message(rng)
            assert deserialize(serialize(msg)) == msg

    def test_emb_payload_size(self):
        msg = tensor_message(MsgType.EMB_FWD, 1, np.zeros((4, 2, 8)), DType.F32)
        assert len(serialize(msg)) - HEADER.size == 256

    def test_header_layout(self):
        raw = serialize(WireMessage(MsgType.STEP_ACK, 7, 4, 8, 2, DType.F64))
        assert raw == b"VSPR" + struct.pack("<BBIIIIB", 1, 3, 7, 4, 8, 2, 1)

    def test_tensor_is_rows_dim_layers(self):
        block = np.arange(12.0).reshape(2, 2, 3)  # (B, L, d)
        msg = tensor_message(MsgType.EMB_FWD, 1, block, DType.F64)
        body = np.frombuffer(serialize(msg)[HEADER.size :], dtype="<f8").reshape(2, 3, 2)
        assert body[1, 2, 0] == block[1, 0, 2]
        assert np.array_equal(tensor_block(deserialize(serialize(msg))), block)

    def test_bad_magic(self):
        raw = b"XXXX" + serialize(WireMessage(MsgType.SHUTDOWN, 1))[4:]
        with pytest.raises(BadMagic) as exc:
            deserialize(raw)
        assert exc.value.offset == 0

    def test_unknown_version_type_dtype(self):
        raw = bytearray(serialize(WireMessage(MsgType.SHUTDOWN, 1)))
        for pos, err in ((4, UnsupportedVersion), (5, UnknownMessageType), (22, UnknownDType)):
            bad = bytearray(raw)
            bad[pos] = 9
            with pytest.raises(err) as exc:
                deserialize(bytes(bad))
            assert exc.value.offset == pos

    def test_truncated_payload(self):
        raw = serialize(tensor_message(MsgType.EMB_FWD, 1, np.ones((2, 2, 2)), DType.F64))
        with pytest.raises(Truncated) as exc:
            deserialize(raw[:-8])
        assert (exc.value.expected, exc.value.actual) == (len(raw), len(raw) - 8)

    def test_trailing_bytes(self):
        with pytest.raises(TrailingBytes):
            deserialize(serialize(WireMessage(MsgType.STEP_ACK, 1)) + b"\x00")

    def test_framing(self):
        msgs = [random_message(np.random.default_rng(i)) for i in range(5)]
        blob = b"".join(frame(serialize(m)) for m in msgs)
        assert blob[:4] == struct.pack(">I", len(serialize(msgs[0])))
        assert list(iter_frames(blob)) == msgs
        with pytest.raises(Truncated):
            list(iter_frames(blob[:-1]))


@pytest.fixture(scope="module")
def task():
    g = generate_sbm([20, 20], 0.3, 0.05, 4, 1.0, np.random.default_rng(0))
    g = g.with_train_mask(np.arange(0, 40, 2))
    cfg = TrainConfig(max_degree=3, dim=8, batch_size=4, steps=10, lr=0.01, theta=0.5)
    return g, cfg


def max_param_diff(p, q):
    assert p.keys() == q.keys()
    return max(float(np.max(np.abs(p[k] - q[k]))) for k in p)


class TestSession:
    def test_split_matches_reference_both_transports(self, task):
        g, cfg = task
        ref = train_reference(g, cfg, seed=3)
        transcripts = []
        for transport in ("inproc", "tcp"):
            a, b = build_parties(g, cfg, seed=3)
            res = run_session(a, b, cfg.steps, transport)
            assert max_param_diff(a.params(), ref.params_a) < 1e-10
            assert max_param_diff(b.decoder.params(), ref.params_b) < 1e-10
            assert np.allclose(res.losses, ref.losses, atol=1e-10)
            transcripts.append(res.transcript.to_bytes())
        assert transcripts[0] == transcripts[1]

    def test_f32_wire_matches_reference(self, task):
        g, cfg = task
        cfg = dataclasses.replace(cfg, dtype=DType.F32)
        ref = train_reference(g, cfg, seed=1)
        a, b = build_parties(g, cfg, seed=1)
        run_session(a, b, cfg.steps, dtype=DType.F32)
        assert max_param_diff(a.params(), ref.params_a) < 1e-10

    def test_information_boundary(self, task):
        g, cfg = task
        a, b = build_parties(g, cfg, seed=0)
        assert a.graph.labels is None
        assert {f.name for f in dataclasses.fields(PartyB)} == {
            "labels",
            "train_ids",
            "decoder",
            "batch_size",
            "rng",
            "optimizer",
        }

    def test_accountant_composes_per_step(self, task):
        g, cfg = task
        a, b = build_parties(g, cfg, seed=0)
        run_session(a, b, 4)
        assert a.accountant.steps_taken == 4

    def test_zero_gradient_leaves_party_a_unchanged(self, task):
        g, cfg = task
        a, _ = build_parties(g, cfg, seed=0)
        before = {k: v.copy() for k, v in a.params().items()}
        emb = a.forward(np.array([0, 2, 4, 6]))
        a.backward(np.zeros_like(emb))
        assert max_param_diff(a.params(), before) == 0.0

    def test_clean_transcript_audit(self, task, tmp_path):
        g, cfg = task
        a, b = build_parties(g, cfg, seed=0)
        res = run_session(a, b, 10)
        sc = SessionConfig(cfg.batch_size, cfg.dim, cfg.num_layers)
        report = audit_transcript(res.transcript.messages(), sc)
        assert report.ok and report.steps == 10 and report.num_messages == 2 + 40 + 1
        res.transcript.dump(tmp_path / "t.bin")
        assert Transcript.load(tmp_path / "t.bin") == res.transcript.messages()


class TestAudit:
    @pytest.fixture()
    def clean(self, task):
        g, cfg = task
        a, b = build_parties(g, cfg, seed=0)
        msgs = run_session(a, b, 6).transcript.messages()
        return msgs, SessionConfig(cfg.batch_size, cfg.dim, cfg.num_layers)

    def test_extra_row_flagged(self, clean):
        msgs, sc = clean
        i = next(i for i, m in enumerate(msgs) if m.msg_type is MsgType.EMB_FWD)
        block = tensor_block(msgs[i])
        msgs[i] = tensor_message(MsgType.EMB_FWD, msgs[i].step, np.concatenate([block, block[:1]]), sc.dtype)
        report = audit_transcript(msgs, sc)
        assert any("shape" in v for v in report.violations)

    def test_missing_grad_flagged(self, clean):
        msgs, sc = clean
        msgs = [m for m in msgs if not (m.msg_type is MsgType.GRAD_BWD and m.step == 5)]
        report = audit_transcript(msgs, sc)
        assert any(v.startswith("step 5") for v in report.violations)
        assert len(report.violations) == 1

    def test_step_gap_flagged(self, clean):
        msgs, sc = clean
        msgs = [dataclasses.replace(m, step=m.step + 1) if m.step >= 4 else m for m in msgs]
        assert any("contiguous" in v for v in audit_transcript(msgs, sc).violations)

    def test_missing_handshake_and_shutdown(self, clean):
        msgs, sc = clean
        report = audit_transcript(msgs[2:-1], sc)
        assert any("handshake" in v for v in report.violations)
        assert any("SHUTDOWN" in v for v in report.violations)


class TestErrors:
    def test_handshake_dtype_mismatch(self):
        a_end, b_end = inproc_pair()
        b_end.send(SessionConfig(4, 8, 2, DType.F32).hello())
        with pytest.raises(HandshakeError):
            party_a_handshake(a_end, SessionConfig(4, 8, 2, DType.F64))
        assert b_end.recv().msg_type is MsgType.SHUTDOWN

    def test_b_rejects_bad_reply(self):
        a_end, b_end = inproc_pair()
        a_end.send(WireMessage(MsgType.STEP_ACK, 0, 4, 8, 3))
        with pytest.raises(HandshakeError):
            party_b_handshake(b_end, SessionConfig(4, 8, 2))

    def test_out_of_order_step(self, task):
        g, cfg = task
        a, _ = build_parties(g, cfg, seed=0)
        sc = SessionConfig(cfg.batch_size, cfg.dim, cfg.num_layers)
        a_end, b_end = inproc_pair()
        b_end.send(sc.hello())
        b_end.send(batch_ids_message(2, np.arange(4), sc.dim, sc.num_layers, sc.dtype))
        with pytest.raises(ProtocolError, match="step"):
            run_party_a(a, a_end, sc)

    def test_tcp_frames_cross_the_socket(self):
        t = Transcript()
        a_end, b_end = tcp_pair(transcript=t)
        try:
            msg = tensor_message(MsgType.GRAD_BWD, 3, np.ones((2, 2, 3)), DType.F64)
            b_end.send(msg)
            assert a_end.recv() == msg
            assert t.messages() == [msg]
        finally:
            a_end.close()
            b_end.close()
