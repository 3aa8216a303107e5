"""Wire protocol between AR clients, the staging server and designer consoles.

Messages are length-prefixed UTF-8 JSON envelopes sent as WebSocket text
frames::

    <byte length of json>\\n{"t": "<tag>", "seq": <n>, "body": {...}}

The JSON is canonical (sorted keys, no whitespace, nulls omitted), so
re-encoding a decoded message is byte-stable.  Unknown body fields are
tolerated; unknown tags are rejected.  Every message except a chunked
ContentSnapshot stays under 64 KiB.

The full field-by-field reference lives in docs/PROTOCOL.md and can be
regenerated with ``arstage export-protocol-doc``.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from typing import ClassVar, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import tracking
from .geo import GeoPosition, LocalPose, LocalPosition, Orientation
from .registry import ContentItem, ContentKind
from .viewsim import DeviceProfile, DivergenceReport, Issue, IssueKind, Verdict

PROTOCOL_MAJOR = 1
PROTOCOL_MINOR = 0
MAX_MESSAGE_BYTES = 64 * 1024


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class SeqRegressionError(ProtocolError):
    def __init__(self, detail: str):
        super().__init__("SEQ_REGRESSION", detail)


class MessageTooLarge(ProtocolError):
    def __init__(self, detail: str):
        super().__init__("MESSAGE_TOO_LARGE", detail)


# -- shared value models -------------------------------------------------


class _Body(BaseModel):
    model_config = ConfigDict(extra="ignore")
    TAG: ClassVar[str]


class GeoModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    lat: float = Field(ge=-90, le=90)
    lon: float
    height: float = 0.0

    @staticmethod
    def wrap(g: GeoPosition) -> "GeoModel":
        return GeoModel(lat=g.latitude_deg, lon=g.longitude_deg, height=g.height_m)

    def unwrap(self) -> GeoPosition:
        return GeoPosition(self.lat, self.lon, self.height)


class PoseModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]

    @staticmethod
    def wrap(p: LocalPose) -> "PoseModel":
        return PoseModel(position=p.position.as_tuple(), orientation=p.orientation.as_tuple())

    def unwrap(self) -> LocalPose:
        return LocalPose(LocalPosition(*self.position), Orientation(*self.orientation))


class ProfileModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    model: str
    os: str
    screen_w_px: int = Field(gt=0)
    screen_h_px: int = Field(gt=0)
    camera_vfov_deg: float = Field(gt=10, lt=170)
    camera_res_w_px: int = Field(gt=0)
    camera_res_h_px: int = Field(gt=0)

    @staticmethod
    def wrap(p: DeviceProfile) -> "ProfileModel":
        return ProfileModel(**p.__dict__)

    def unwrap(self) -> DeviceProfile:
        return DeviceProfile(**self.model_dump())


class SensorEvidenceModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    geo: GeoModel
    horizontal_accuracy_m: float = Field(gt=0)
    orientation: tuple[float, float, float, float]


class TargetEvidenceModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    fiducial_id: str
    relative_pose: PoseModel
    confidence: float = Field(ge=0, le=1)


class SlamEvidenceModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    delta_pose: PoseModel
    tracking_quality: float = Field(ge=0, le=1)


class EvidenceModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    mode: Literal["SensorBased", "TargetBased", "SlamBased"]
    timestamp_ms: float
    sensor: Optional[SensorEvidenceModel] = None
    target: Optional[TargetEvidenceModel] = None
    slam: Optional[SlamEvidenceModel] = None

    @model_validator(mode="after")
    def _payload_matches_mode(self):
        expected = {"SensorBased": "sensor", "TargetBased": "target", "SlamBased": "slam"}
        name = expected[self.mode]
        if getattr(self, name) is None:
            raise ValueError(f"mode {self.mode} requires the {name!r} payload")
        return self

    @staticmethod
    def wrap(e: tracking.PoseEvidence) -> "EvidenceModel":
        fields: dict = {"mode": e.mode.value, "timestamp_ms": e.timestamp_ms}
        if e.mode is tracking.TrackingMode.SENSOR:
            p = e.payload
            fields["sensor"] = SensorEvidenceModel(
                geo=GeoModel.wrap(p.geo),
                horizontal_accuracy_m=p.horizontal_accuracy_m,
                orientation=p.orientation.as_tuple(),
            )
        elif e.mode is tracking.TrackingMode.TARGET:
            p = e.payload
            fields["target"] = TargetEvidenceModel(
                fiducial_id=p.fiducial_id,
                relative_pose=PoseModel.wrap(p.relative_pose),
                confidence=p.confidence,
            )
        else:
            p = e.payload
            fields["slam"] = SlamEvidenceModel(
                delta_pose=PoseModel.wrap(p.delta_pose),
                tracking_quality=p.tracking_quality,
            )
        return EvidenceModel(**fields)

    def unwrap(self) -> tracking.PoseEvidence:
        mode = tracking.TrackingMode(self.mode)
        if mode is tracking.TrackingMode.SENSOR:
            payload = tracking.SensorPayload(
                self.sensor.geo.unwrap(),
                self.sensor.horizontal_accuracy_m,
                Orientation(*self.sensor.orientation),
            )
        elif mode is tracking.TrackingMode.TARGET:
            payload = tracking.TargetPayload(
                self.target.fiducial_id,
                self.target.relative_pose.unwrap(),
                self.target.confidence,
            )
        else:
            payload = tracking.SlamPayload(
                self.slam.delta_pose.unwrap(), self.slam.tracking_quality
            )
        return tracking.PoseEvidence(mode, self.timestamp_ms, payload)


class ItemModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    id: str
    kind: Literal["ImageQuad", "VideoQuad", "Mesh", "SpatialAudio", "Fiducial"]
    lat: float = Field(ge=-90, le=90)
    lon: float
    height: float = 0.0
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    asset_ref: str = ""
    metadata: dict[str, str] = Field(default_factory=dict)

    @staticmethod
    def wrap(item: ContentItem) -> "ItemModel":
        return ItemModel(**item.to_dict())

    def unwrap(self) -> ContentItem:
        return ContentItem.from_dict(self.model_dump())


class IssueModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    kind: str
    item_id: Optional[str] = None
    other_item_id: Optional[str] = None
    value: Optional[float] = None

    @staticmethod
    def wrap(issue: Issue) -> "IssueModel":
        return IssueModel(
            kind=issue.kind.value,
            item_id=issue.item_id,
            other_item_id=issue.other_item_id,
            value=issue.value,
        )

    def unwrap(self) -> Issue:
        return Issue(IssueKind(self.kind), self.item_id, self.other_item_id, self.value)


class DivergenceModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    rotational_error_deg: float = Field(ge=0)
    positional_error_m: float = Field(ge=0)
    verdict: Literal["Nominal", "RotationalMismatch", "PositionalMismatch", "Both"]

    @staticmethod
    def wrap(r: DivergenceReport) -> "DivergenceModel":
        return DivergenceModel(
            rotational_error_deg=r.rotational_error_deg,
            positional_error_m=r.positional_error_m,
            verdict=r.verdict.value,
        )

    def unwrap(self) -> DivergenceReport:
        return DivergenceReport(
            self.rotational_error_deg, self.positional_error_m, Verdict(self.verdict)
        )


# -- message variants ----------------------------------------------------


class ClientHello(_Body):
    TAG = "ClientHello"
    client_id: str
    profile: ProfileModel
    protocol_major: int = PROTOCOL_MAJOR
    protocol_minor: int = PROTOCOL_MINOR
    role: Literal["client", "designer"] = "client"
    auth_token: Optional[str] = None


class PoseUpdate(_Body):
    TAG = "PoseUpdate"
    client_id: str
    evidence: EvidenceModel


class Telemetry(_Body):
    TAG = "Telemetry"
    client_id: str
    render_fps: float = Field(ge=0)
    tracking_fps: float = Field(ge=0)
    active_mode: Literal["SensorBased", "TargetBased", "SlamBased"]
    horizontal_accuracy_m: Optional[float] = Field(default=None, gt=0)
    battery_pct: Optional[float] = Field(default=None, ge=0, le=100)
    # the pose the device says it really has; stands in for video streaming
    actual_geo: Optional[GeoModel] = None
    actual_orientation: Optional[tuple[float, float, float, float]] = None


class ContentSnapshot(_Body):
    TAG = "ContentSnapshot"
    revision: int = Field(ge=0)
    items: list[ItemModel]
    chunk_index: int = 0
    chunk_count: int = 1
    # local-frame origin of the experience; lets consoles map geo<->meters
    origin: Optional[GeoModel] = None


class ContentDelta(_Body):
    TAG = "ContentDelta"
    revision: int = Field(ge=0)
    changed: list[ItemModel] = Field(default_factory=list)
    removed: list[str] = Field(default_factory=list)


class EditCommand(_Body):
    TAG = "EditCommand"
    item_id: str
    editor_id: str
    geo: Optional[GeoModel] = None
    orientation: Optional[tuple[float, float, float, float]] = None
    scale: Optional[tuple[float, float, float]] = None


class UserSummary(BaseModel):
    model_config = ConfigDict(extra="ignore")
    client_id: str
    model: str = ""
    os: str = ""


class UserJoined(_Body):
    TAG = "UserJoined"
    user: UserSummary


class UserLeft(_Body):
    TAG = "UserLeft"
    client_id: str


class Ack(_Body):
    TAG = "Ack"
    ref_seq: int


class ErrorMsg(_Body):
    TAG = "Error"
    code: str
    detail: str = ""


class FrameThumbnail(_Body):
    TAG = "FrameThumbnail"
    client_id: str
    image_b64: str

    @model_validator(mode="after")
    def _valid_base64(self):
        try:
            base64.b64decode(self.image_b64, validate=True)
        except (binascii.Error, ValueError) as e:
            raise ValueError(f"image_b64 is not valid base64: {e}")
        return self


class VisibleItemModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    item_id: str
    distance_m: float = Field(ge=0)
    angular_height_deg: float = Field(ge=0)
    screen_bbox: tuple[float, float, float, float]  # (u0, v0, u1, v1) in [0,1] space


class UserFeedEntry(BaseModel):
    model_config = ConfigDict(extra="ignore")
    client_id: str
    profile: ProfileModel
    pose: PoseModel
    horizontal_accuracy_m: Optional[float] = None
    active_mode: Literal["SensorBased", "TargetBased", "SlamBased"]
    blend_weight: float = Field(ge=0, le=1)
    avatar_mode: Literal["FiveDof", "SixDof"] = "FiveDof"
    render_fps: float = 0.0
    tracking_fps: float = 0.0
    battery_pct: Optional[float] = None
    frustum_near_m: float = 0.1
    frustum_far_m: float = 2000.0
    divergence: Optional[DivergenceModel] = None
    issues: list[IssueModel] = Field(default_factory=list)
    visible: list[VisibleItemModel] = Field(default_factory=list)
    last_seen_ms: float = 0.0


class MonitoringFrame(_Body):
    TAG = "MonitoringFrame"
    revision: int = Field(ge=0)
    tick: int = Field(ge=0)
    users: list[UserFeedEntry] = Field(default_factory=list)


MESSAGE_TYPES: dict[str, Type[_Body]] = {
    cls.TAG: cls
    for cls in (
        ClientHello,
        PoseUpdate,
        Telemetry,
        ContentSnapshot,
        ContentDelta,
        EditCommand,
        UserJoined,
        UserLeft,
        Ack,
        ErrorMsg,
        FrameThumbnail,
        MonitoringFrame,
    )
}


@dataclass(frozen=True)
class Message:
    seq: int
    body: _Body

    @property
    def tag(self) -> str:
        return self.body.TAG


def _field_path(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(p) for p in first["loc"]) or "<root>"


def encode(msg: Message) -> bytes:
    """Canonical wire bytes for a message."""
    envelope = {
        "t": msg.tag,
        "seq": msg.seq,
        "body": msg.body.model_dump(exclude_none=True),
    }
    payload = json.dumps(
        envelope, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    if len(payload) > MAX_MESSAGE_BYTES and msg.tag != ContentSnapshot.TAG:
        raise MessageTooLarge(f"{msg.tag} is {len(payload)} bytes")
    return b"%d\n%s" % (len(payload), payload)


def decode(data: bytes) -> Message:
    """Parse wire bytes; raises ProtocolError(BAD_MESSAGE) on any malformation."""
    try:
        prefix, _, payload = data.partition(b"\n")
        declared = int(prefix)
    except ValueError:
        raise ProtocolError("BAD_MESSAGE", "missing or non-numeric length prefix") from None
    if declared != len(payload):
        raise ProtocolError(
            "BAD_MESSAGE", f"length prefix {declared} != payload length {len(payload)}"
        )
    try:
        envelope = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError("BAD_MESSAGE", f"invalid JSON: {e}") from None
    if not isinstance(envelope, dict):
        raise ProtocolError("BAD_MESSAGE", "envelope must be a JSON object")
    tag = envelope.get("t")
    seq = envelope.get("seq")
    body = envelope.get("body")
    if not isinstance(tag, str) or tag not in MESSAGE_TYPES:
        raise ProtocolError("BAD_MESSAGE", f"unknown tag {tag!r}")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ProtocolError("BAD_MESSAGE", "seq must be a non-negative integer")
    if not isinstance(body, dict):
        raise ProtocolError("BAD_MESSAGE", "body must be a JSON object")
    try:
        model = MESSAGE_TYPES[tag].model_validate(body)
    except ValidationError as e:
        raise ProtocolError("BAD_MESSAGE", _field_path(e)) from None
    return Message(seq=seq, body=model)


def chunk_content_snapshot(
    revision: int,
    items: list[ItemModel],
    max_bytes: int = MAX_MESSAGE_BYTES,
    origin: Optional[GeoModel] = None,
) -> list[ContentSnapshot]:
    """Split a snapshot so every chunk encodes under max_bytes."""
    groups: list[list[ItemModel]] = [[]]
    size = 0
    overhead = 512
    for item in items:
        cost = len(item.model_dump_json().encode("utf-8")) + 1
        if groups[-1] and size + cost > max_bytes - overhead:
            groups.append([])
            size = 0
        groups[-1].append(item)
        size += cost
    return [
        ContentSnapshot(
            revision=revision,
            items=group,
            chunk_index=i,
            chunk_count=len(groups),
            origin=origin,
        )
        for i, group in enumerate(groups)
    ]


class SequenceValidator:
    """Per-connection sequence check: regressions and duplicates rejected, gaps allowed."""

    def __init__(self):
        self._last: Optional[int] = None

    def validate(self, msg: Message) -> None:
        if self._last is not None and msg.seq <= self._last:
            raise SeqRegressionError(
                f"seq {msg.seq} after {self._last}"
            )
        self._last = msg.seq
