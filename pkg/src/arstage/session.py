"""Staging session core: users, fusion, broadcasts and the monitoring feed.

Transport-agnostic on purpose: connections are just callables that
accept wire bytes, and all timing comes in through explicit ``now_ms``
arguments.  The FastAPI layer (service.py) adapts WebSockets onto this,
and the simulated clients drive it directly with a logical clock, which
keeps multi-user scenarios deterministic and fast.

All mutations run on the caller's thread; callers serialize access
(the asyncio server funnels everything through one event loop).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .config import ServerConfig
from .geo import LocalPose, LocalPosition, Orientation, geo_to_local
from .protocol import (
    Ack,
    ClientHello,
    ContentDelta,
    ContentSnapshot,
    DivergenceModel,
    EditCommand,
    ErrorMsg,
    FrameThumbnail,
    GeoModel,
    IssueModel,
    ItemModel,
    Message,
    MonitoringFrame,
    PoseModel,
    PoseUpdate,
    ProfileModel,
    ProtocolError,
    SequenceValidator,
    Telemetry,
    UserFeedEntry,
    UserJoined,
    UserLeft,
    UserSummary,
    VisibleItemModel,
    PROTOCOL_MAJOR,
    chunk_content_snapshot,
    decode,
    encode,
)
from .registry import ChangeEvent, ContentKind, Project, RegistryError, UnknownItemError
from .tracking import (
    EvidenceRegressionError,
    FusedPose,
    FusionConfig,
    FusionState,
    TrackingError,
)
from .viewsim import (
    NEAR_PLANE_M,
    FAR_PLANE_M,
    DeviceProfile,
    DiagnosisThresholds,
    ViewThresholds,
    diagnose,
    render_expected_view,
)

log = logging.getLogger(__name__)

SendFn = Callable[[bytes], None]


@dataclass
class Connection:
    conn_id: int
    send_bytes: SendFn
    seq: SequenceValidator = field(default_factory=SequenceValidator)
    client_id: Optional[str] = None
    role: str = "client"
    closed: bool = False
    out_seq: int = 0

    def send(self, body) -> None:
        if self.closed:
            return
        self.out_seq += 1
        try:
            self.send_bytes(encode(Message(seq=self.out_seq, body=body)))
        except Exception:
            log.exception("send to conn %s failed", self.conn_id)
            self.closed = True


@dataclass
class UserState:
    client_id: str
    profile: DeviceProfile
    fusion: FusionState
    connection: Connection
    fused: Optional[FusedPose] = None
    telemetry: Optional[Telemetry] = None
    avatar_mode: str = "FiveDof"
    last_seen_ms: float = 0.0


class Session:
    """One running AR experience: a project plus everything connected to it."""

    def __init__(self, project: Project, config: Optional[ServerConfig] = None):
        self.project = project
        self.config = config or ServerConfig()
        self.users: dict[str, UserState] = {}
        self._conns: dict[int, Connection] = {}
        self._conn_ids = itertools.count(1)
        self._tick = 0
        self.broadcast_revision = 0
        self._fusion_config = FusionConfig(
            staleness_ms=self.config.fusion.staleness_ms,
            transition_ms=self.config.fusion.transition_ms,
            near_m=self.config.fusion.near_m,
            hysteresis_m=self.config.fusion.hysteresis_m,
            slam_drift_m_per_s=self.config.fusion.slam_drift_m_per_s,
        )
        t = self.config.thresholds
        self._view_thresholds = ViewThresholds(
            too_close_m=t.too_close_m,
            unreadable_deg=t.unreadable_deg,
            overlap_frac=t.overlap_frac,
            clutter_n=t.clutter_n,
        )
        self._diag_thresholds = DiagnosisThresholds(rot_deg=t.rot_deg, pos_m=t.pos_m)
        project.subscribe(self._on_registry_change)

    # -- connection lifecycle -------------------------------------------

    def connect(self, send_bytes: SendFn) -> int:
        conn = Connection(next(self._conn_ids), send_bytes)
        self._conns[conn.conn_id] = conn
        return conn.conn_id

    def disconnect(self, conn_id: int, now_ms: float = 0.0) -> None:
        conn = self._conns.pop(conn_id, None)
        if conn is None:
            return
        conn.closed = True
        if conn.client_id and conn.client_id in self.users:
            if self.users[conn.client_id].connection is conn:
                del self.users[conn.client_id]
                self._broadcast_designers(UserLeft(client_id=conn.client_id))

    def connection_open(self, conn_id: int) -> bool:
        conn = self._conns.get(conn_id)
        return conn is not None and not conn.closed

    def designer_connections(self) -> list[Connection]:
        return [c for c in self._conns.values() if c.role == "designer" and c.client_id]

    def client_connections(self) -> list[Connection]:
        return [c for c in self._conns.values() if c.role == "client" and c.client_id]

    # -- inbound --------------------------------------------------------

    def receive(self, conn_id: int, data: bytes, now_ms: float) -> None:
        conn = self._conns.get(conn_id)
        if conn is None or conn.closed:
            return
        try:
            msg = decode(data)
            conn.seq.validate(msg)
        except ProtocolError as e:
            conn.send(ErrorMsg(code=e.code, detail=e.detail))
            return
        body = msg.body
        if isinstance(body, ClientHello):
            self._handle_hello(conn, body, now_ms)
        elif isinstance(body, PoseUpdate):
            self._handle_pose(conn, body, now_ms)
        elif isinstance(body, Telemetry):
            self._handle_telemetry(conn, body, now_ms)
        elif isinstance(body, EditCommand):
            self._handle_edit(conn, body)
        elif isinstance(body, FrameThumbnail):
            self._broadcast_designers(body)
        elif isinstance(body, Ack):
            pass
        else:
            conn.send(ErrorMsg(code="UNSUPPORTED", detail=f"server ignores {body.TAG}"))

    def _handle_hello(self, conn: Connection, hello: ClientHello, now_ms: float) -> None:
        if hello.protocol_major != PROTOCOL_MAJOR:
            conn.send(
                ErrorMsg(
                    code="VERSION_MISMATCH",
                    detail=f"server speaks major {PROTOCOL_MAJOR}, client sent {hello.protocol_major}",
                )
            )
            conn.closed = True
            return
        if self.config.auth_token and hello.auth_token != self.config.auth_token:
            conn.send(ErrorMsg(code="AUTH_FAILED", detail="bad or missing auth token"))
            conn.closed = True
            return
        conn.client_id = hello.client_id
        conn.role = hello.role
        profile = hello.profile.unwrap()
        if hello.role == "client":
            if hello.client_id in self.users:
                log.warning("client_id %s reconnected; replacing previous state", hello.client_id)
                old = self.users[hello.client_id].connection
                if old is not conn:
                    old.closed = True
            self.users[hello.client_id] = UserState(
                client_id=hello.client_id,
                profile=profile,
                fusion=self._new_fusion_state(),
                connection=conn,
                avatar_mode=self.config.avatar_mode,
                last_seen_ms=now_ms,
            )
            self._broadcast_designers(
                UserJoined(
                    user=UserSummary(
                        client_id=hello.client_id, model=profile.model, os=profile.os
                    )
                )
            )
        self._send_snapshot(conn)

    def _new_fusion_state(self) -> FusionState:
        def fiducial_lookup(fid: str):
            item = self.project.get_item(fid)  # raises UnknownItemError
            if item.kind is not ContentKind.FIDUCIAL:
                raise KeyError(fid)
            return (
                LocalPose(self.project.item_local_position(item), item.orientation),
                item.scale,
            )

        def content_positions() -> list[LocalPosition]:
            return [self.project.item_local_position(i) for i in self.project.render_items()]

        def lookup(fid: str):
            try:
                return fiducial_lookup(fid)
            except UnknownItemError:
                raise KeyError(fid) from None

        return FusionState(
            self.project.anchor,
            self._fusion_config,
            fiducials=lookup,
            content_positions=content_positions,
        )

    def _handle_pose(self, conn: Connection, update: PoseUpdate, now_ms: float) -> None:
        user = self.users.get(update.client_id)
        if user is None or user.connection is not conn:
            conn.send(ErrorMsg(code="NOT_REGISTERED", detail=update.client_id))
            return
        user.last_seen_ms = now_ms
        try:
            user.fused = user.fusion.ingest(update.evidence.unwrap())
        except EvidenceRegressionError as e:
            conn.send(ErrorMsg(code="STALE_CLOCK", detail=str(e)))
        except TrackingError as e:
            conn.send(ErrorMsg(code="BAD_EVIDENCE", detail=str(e)))

    def _handle_telemetry(self, conn: Connection, telemetry: Telemetry, now_ms: float) -> None:
        user = self.users.get(telemetry.client_id)
        if user is None or user.connection is not conn:
            conn.send(ErrorMsg(code="NOT_REGISTERED", detail=telemetry.client_id))
            return
        user.last_seen_ms = now_ms
        user.telemetry = telemetry

    def _handle_edit(self, conn: Connection, cmd: EditCommand) -> None:
        if conn.role != "designer":
            # clients never mutate content
            conn.send(ErrorMsg(code="FORBIDDEN", detail="only designers may edit"))
            return
        fields = {}
        if cmd.geo is not None:
            fields["geo"] = cmd.geo.unwrap()
        if cmd.orientation is not None:
            fields["orientation"] = Orientation(*cmd.orientation)
        if cmd.scale is not None:
            fields["scale"] = tuple(cmd.scale)
        try:
            self.project.update_item(cmd.item_id, **fields)
        except UnknownItemError:
            conn.send(ErrorMsg(code="UNKNOWN_ITEM", detail=cmd.item_id))
        except RegistryError as e:
            conn.send(ErrorMsg(code="BAD_EDIT", detail=str(e)))
        # the registry change event broadcasts the ContentDelta

    # -- outbound -------------------------------------------------------

    def _send_snapshot(self, conn: Connection) -> None:
        items = [ItemModel.wrap(i) for i in self.project.render_items()]
        if conn.role == "designer":  # designers also see fiducials
            items = [ItemModel.wrap(i) for i in self.project.list_items()]
        origin = GeoModel.wrap(self.project.anchor_origin)
        for chunk in chunk_content_snapshot(self.project.revision, items, origin=origin):
            conn.send(chunk)
        self.broadcast_revision = self.project.revision

    def _on_registry_change(self, event: ChangeEvent) -> None:
        if event.new is None:
            delta = ContentDelta(revision=event.revision, removed=[event.item_id])
            client_delta = delta
        else:
            delta = ContentDelta(revision=event.revision, changed=[ItemModel.wrap(event.new)])
            if event.new.kind is ContentKind.FIDUCIAL:
                client_delta = None  # fiducials are designer-only
            else:
                client_delta = delta
        for conn in self.client_connections():
            if client_delta is not None:
                conn.send(client_delta)
        for conn in self.designer_connections():
            conn.send(delta)
        self.broadcast_revision = event.revision

    def _broadcast_designers(self, body) -> None:
        for conn in self.designer_connections():
            conn.send(body)

    # -- monitoring -----------------------------------------------------

    def tick(self, now_ms: float) -> MonitoringFrame:
        """One feed tick: drop silent clients, then push a frame to designers."""
        self._tick += 1
        timeout_ms = self.config.disconnect_timeout_s * 1000.0
        for user in list(self.users.values()):
            if now_ms - user.last_seen_ms > timeout_ms:
                log.info("client %s timed out", user.client_id)
                self.disconnect(user.connection.conn_id, now_ms)
        frame = self.monitoring_snapshot(now_ms)
        self._broadcast_designers(frame)
        return frame

    def monitoring_snapshot(self, now_ms: float) -> MonitoringFrame:
        entries = []
        for user in self.users.values():
            if user.fused is None:
                continue
            entries.append(self._feed_entry(user))
        return MonitoringFrame(
            revision=self.project.revision, tick=self._tick, users=entries
        )

    def _feed_entry(self, user: UserState) -> UserFeedEntry:
        fused = user.fused
        pose = fused.pose
        if user.avatar_mode == "FiveDof":
            pose = LocalPose(
                LocalPosition(pose.position.x_m, self.config.eye_height_m, pose.position.z_m),
                pose.orientation,
            )
        divergence = None
        t0 = user.telemetry
        if t0 is not None and t0.actual_geo is not None and t0.actual_orientation is not None:
            actual = LocalPose(
                geo_to_local(self.project.anchor, t0.actual_geo.unwrap()),
                Orientation(*t0.actual_orientation),
            )
            divergence = DivergenceModel.wrap(
                diagnose(fused.pose, actual, self._diag_thresholds)
            )
        report = render_expected_view(
            fused.pose, user.profile, self.project, self._view_thresholds
        )
        t = user.telemetry
        return UserFeedEntry(
            client_id=user.client_id,
            profile=ProfileModel.wrap(user.profile),
            pose=PoseModel.wrap(pose),
            horizontal_accuracy_m=fused.horizontal_accuracy_m,
            active_mode=fused.active_mode.value,
            blend_weight=fused.blend_weight,
            avatar_mode=user.avatar_mode,
            render_fps=t.render_fps if t else 0.0,
            tracking_fps=t.tracking_fps if t else 0.0,
            battery_pct=t.battery_pct if t else None,
            frustum_near_m=NEAR_PLANE_M,
            frustum_far_m=FAR_PLANE_M,
            divergence=divergence,
            issues=[IssueModel.wrap(i) for i in report.issues],
            visible=[
                VisibleItemModel(
                    item_id=v.item_id,
                    distance_m=v.distance_m,
                    angular_height_deg=v.angular_height_deg,
                    screen_bbox=v.screen_bbox,
                )
                for v in report.visible
            ],
            last_seen_ms=user.last_seen_ms,
        )

    def healthz(self) -> dict:
        return {
            "status": "ok",
            "users": len(self.users),
            "revision": self.project.revision,
        }
