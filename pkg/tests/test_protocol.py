import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arstage import protocol as proto
from arstage.protocol import (
    Ack,
    ClientHello,
    ContentDelta,
    ContentSnapshot,
    EditCommand,
    ErrorMsg,
    EvidenceModel,
    FrameThumbnail,
    GeoModel,
    ItemModel,
    Message,
    MonitoringFrame,
    PoseModel,
    PoseUpdate,
    ProfileModel,
    ProtocolError,
    SeqRegressionError,
    SequenceValidator,
    Telemetry,
    UserFeedEntry,
    UserJoined,
    UserLeft,
    UserSummary,
    chunk_content_snapshot,
    decode,
    encode,
)

PROFILE = ProfileModel(
    model="TestPhone",
    os="TestOS",
    screen_w_px=1080,
    screen_h_px=1920,
    camera_vfov_deg=60.0,
    camera_res_w_px=1920,
    camera_res_h_px=1080,
)

ITEM = ItemModel(id="item-1", kind="ImageQuad", lat=41.8781, lon=-87.6298, height=1.5)

SAMPLE_BODIES = [
    ClientHello(client_id="c1", profile=PROFILE),
    ClientHello(client_id="d1", profile=PROFILE, role="designer", auth_token="secret"),
    PoseUpdate(
        client_id="c1",
        evidence=EvidenceModel(
            mode="SensorBased",
            timestamp_ms=1000.0,
            sensor={
                "geo": {"lat": 41.8781, "lon": -87.6298, "height": 1.6},
                "horizontal_accuracy_m": 4.5,
                "orientation": [1, 0, 0, 0],
            },
        ),
    ),
    PoseUpdate(
        client_id="c1",
        evidence=EvidenceModel(
            mode="TargetBased",
            timestamp_ms=1100.0,
            target={
                "fiducial_id": "f1",
                "relative_pose": {"position": [0, 0, -2], "orientation": [1, 0, 0, 0]},
                "confidence": 0.9,
            },
        ),
    ),
    PoseUpdate(
        client_id="c1",
        evidence=EvidenceModel(
            mode="SlamBased",
            timestamp_ms=1200.0,
            slam={
                "delta_pose": {"position": [0.1, 0, 0], "orientation": [1, 0, 0, 0]},
                "tracking_quality": 0.8,
            },
        ),
    ),
    Telemetry(
        client_id="c1",
        render_fps=58.5,
        tracking_fps=30.0,
        active_mode="SensorBased",
        horizontal_accuracy_m=4.5,
        battery_pct=77.0,
        actual_geo=GeoModel(lat=41.8781, lon=-87.6298, height=1.6),
        actual_orientation=(1, 0, 0, 0),
    ),
    ContentSnapshot(revision=3, items=[ITEM]),
    ContentDelta(revision=4, changed=[ITEM], removed=["gone-1"]),
    EditCommand(item_id="item-1", editor_id="designer-1", geo=GeoModel(lat=41.88, lon=-87.63)),
    UserJoined(user=UserSummary(client_id="c1", model="TestPhone", os="TestOS")),
    UserLeft(client_id="c1"),
    Ack(ref_seq=17),
    ErrorMsg(code="NOT_REGISTERED", detail="client c9 never said hello"),
    FrameThumbnail(client_id="c1", image_b64="aGVsbG8="),
    MonitoringFrame(
        revision=4,
        tick=120,
        users=[
            UserFeedEntry(
                client_id="c1",
                profile=PROFILE,
                pose=PoseModel(position=(0, 1.6, 0), orientation=(1, 0, 0, 0)),
                horizontal_accuracy_m=4.5,
                active_mode="SensorBased",
                blend_weight=1.0,
            )
        ],
    ),
]


class TestRoundTrip:
    @pytest.mark.parametrize("body", SAMPLE_BODIES, ids=lambda b: b.TAG)
    def test_every_variant_roundtrips(self, body):
        msg = Message(seq=1, body=body)
        wire = encode(msg)
        back = decode(wire)
        assert back.tag == msg.tag
        assert back.seq == 1
        assert back.body == body
        # golden byte-for-byte: re-encoding is stable
        assert encode(back) == wire

    @pytest.mark.parametrize("body", SAMPLE_BODIES, ids=lambda b: b.TAG)
    def test_canonical_reencoding(self, body):
        wire = encode(Message(seq=9, body=body))
        assert encode(decode(wire)) == wire

    def test_unknown_fields_tolerated(self):
        wire = encode(Message(seq=1, body=Ack(ref_seq=5)))
        length, _, payload = wire.partition(b"\n")
        env = json.loads(payload)
        env["body"]["future_field"] = "whatever"
        raw = json.dumps(env).encode()
        msg = decode(b"%d\n%s" % (len(raw), raw))
        assert msg.body.ref_seq == 5

    def test_unknown_tag_rejected(self):
        raw = json.dumps({"t": "Teleport", "seq": 1, "body": {}}).encode()
        with pytest.raises(ProtocolError) as e:
            decode(b"%d\n%s" % (len(raw), raw))
        assert e.value.code == "BAD_MESSAGE"

    def test_negative_accuracy_names_field(self):
        raw = json.dumps(
            {
                "t": "Telemetry",
                "seq": 1,
                "body": {
                    "client_id": "c1",
                    "render_fps": 30,
                    "tracking_fps": 30,
                    "active_mode": "SensorBased",
                    "horizontal_accuracy_m": -2.0,
                },
            }
        ).encode()
        with pytest.raises(ProtocolError) as e:
            decode(b"%d\n%s" % (len(raw), raw))
        assert e.value.code == "BAD_MESSAGE"
        assert "horizontal_accuracy_m" in e.value.detail

    def test_evidence_payload_must_match_mode(self):
        raw = json.dumps(
            {
                "t": "PoseUpdate",
                "seq": 1,
                "body": {
                    "client_id": "c1",
                    "evidence": {"mode": "SensorBased", "timestamp_ms": 1},
                },
            }
        ).encode()
        with pytest.raises(ProtocolError):
            decode(b"%d\n%s" % (len(raw), raw))

    def test_length_prefix_mismatch(self):
        with pytest.raises(ProtocolError):
            decode(b'999\n{"t":"Ack","seq":1,"body":{"ref_seq":1}}')


class TestFuzz:
    def test_random_bytes_never_crash(self):
        rng = random.Random(1337)
        outcomes = {"error": 0, "ok": 0}
        for _ in range(10000):
            n = rng.randint(0, 200)
            blob = bytes(rng.getrandbits(8) for _ in range(n))
            try:
                msg = decode(blob)
            except ProtocolError:
                outcomes["error"] += 1
            else:
                assert isinstance(msg, Message)
                outcomes["ok"] += 1
        assert outcomes["error"] + outcomes["ok"] == 10000

    @given(st.binary(max_size=300))
    @settings(max_examples=500, deadline=None)
    def test_arbitrary_binary(self, blob):
        try:
            msg = decode(blob)
        except ProtocolError:
            return
        assert isinstance(msg, Message)

    @given(
        st.integers(min_value=0, max_value=2**31),
        st.floats(allow_nan=False, allow_infinity=False, width=32),
        st.text(max_size=40),
    )
    @settings(max_examples=300, deadline=None)
    def test_property_roundtrip(self, seq, fps, detail):
        bodies = [
            Ack(ref_seq=seq),
            ErrorMsg(code="X", detail=detail),
            Telemetry(
                client_id="c",
                render_fps=abs(fps),
                tracking_fps=abs(fps),
                active_mode="SlamBased",
            ),
        ]
        for body in bodies:
            wire = encode(Message(seq=seq, body=body))
            back = decode(wire)
            assert back.body == body
            assert encode(back) == wire


class TestSize:
    def test_large_non_snapshot_rejected(self):
        big = ErrorMsg(code="X", detail="y" * (70 * 1024))
        with pytest.raises(proto.MessageTooLarge):
            encode(Message(seq=1, body=big))

    def test_snapshot_chunking(self):
        items = [
            ItemModel(
                id=f"i{n}",
                kind="Mesh",
                lat=41.0,
                lon=-87.0,
                metadata={"blob": "x" * 500},
            )
            for n in range(500)
        ]
        chunks = chunk_content_snapshot(7, items)
        assert len(chunks) > 1
        assert sum(len(c.items) for c in chunks) == 500
        seen = []
        for i, chunk in enumerate(chunks):
            assert chunk.chunk_index == i
            assert chunk.chunk_count == len(chunks)
            assert len(encode(Message(seq=1, body=chunk))) <= proto.MAX_MESSAGE_BYTES
            seen += [it.id for it in chunk.items]
        assert seen == [f"i{n}" for n in range(500)]


class TestSequenceValidation:
    def test_in_order_accepted(self):
        v = SequenceValidator()
        for seq in (1, 2, 3):
            v.validate(Message(seq=seq, body=Ack(ref_seq=1)))

    def test_gaps_allowed(self):
        v = SequenceValidator()
        v.validate(Message(seq=1, body=Ack(ref_seq=1)))
        v.validate(Message(seq=3, body=Ack(ref_seq=1)))

    def test_regression_rejected(self):
        v = SequenceValidator()
        v.validate(Message(seq=5, body=Ack(ref_seq=1)))
        with pytest.raises(SeqRegressionError):
            v.validate(Message(seq=4, body=Ack(ref_seq=1)))

    def test_duplicate_rejected(self):
        v = SequenceValidator()
        v.validate(Message(seq=5, body=Ack(ref_seq=1)))
        with pytest.raises(SeqRegressionError):
            v.validate(Message(seq=5, body=Ack(ref_seq=1)))
