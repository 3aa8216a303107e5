"""Headless scripted AR clients.

A scenario walks a waypoint path at a fixed speed while synthesizing
sensor/target/SLAM evidence from ground truth, with seeded noise and
timed fault injection.  Clients run on a logical clock by default, so a
50-user half-minute dry run takes well under a second and replays
byte-identically per seed; a wall-clock mode drives live demos.

Transports: in-process (drives a Session directly, exact timing) or a
real WebSocket connection to a running server.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .geo import (
    FrameAnchor,
    GeoPosition,
    LocalPose,
    LocalPosition,
    Orientation,
    compose,
    geo_to_local,
    heading_to_orientation,
    inverse,
    local_to_geo,
    make_anchor,
)
from .protocol import (
    ClientHello,
    ContentDelta,
    ContentSnapshot,
    ErrorMsg,
    EvidenceModel,
    GeoModel,
    Message,
    MonitoringFrame,
    PoseModel,
    ProfileModel,
    Telemetry,
    PoseUpdate,
    decode,
    encode,
)
from .registry import ContentKind, Project
from .session import Session
from .tracking import TargetPayload, TrackingMode, relative_detection

EYE_HEIGHT_M = 1.6
DETECT_RANGE_M = 15.0
DETECT_HALF_ANGLE_DEG = 60.0


class ScenarioError(Exception):
    pass


class Waypoint(BaseModel):
    model_config = ConfigDict(extra="forbid")
    lat: float = Field(ge=-90, le=90)
    lon: float
    height: float = 0.0
    dwell_s: float = Field(default=0.0, ge=0)


class NoiseModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    gps_sigma_m: float = Field(default=0.0, ge=0)
    gps_rate_hz: float = Field(default=1.0, gt=0)
    imu_rate_hz: float = Field(default=30.0, gt=0)
    gyro_drift_deg_s: float = Field(default=0.0, ge=0)
    compass_bias_deg: float = 0.0
    target_rot_sigma_deg: float = Field(default=0.0, ge=0)
    seed: int = 0


class FaultInjection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["GpsBias", "GyroDrift", "Dropout"]
    start_s: float = Field(ge=0)
    duration_s: float = Field(gt=0)
    offset_m: Optional[tuple[float, float]] = None  # (east, north) for GpsBias
    deg_s: Optional[float] = None  # GyroDrift rate
    mode: Optional[Literal["SensorBased", "TargetBased", "SlamBased"]] = None

    @model_validator(mode="after")
    def _kind_params(self):
        required = {"GpsBias": "offset_m", "GyroDrift": "deg_s", "Dropout": "mode"}
        name = required[self.kind]
        if getattr(self, name) is None:
            raise ValueError(f"{self.kind} fault requires {name!r}")
        return self

    def active(self, t_s: float) -> bool:
        return self.start_s <= t_s < self.start_s + self.duration_s


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    client_id: Optional[str] = None
    profile: ProfileModel
    path: list[Waypoint] = Field(min_length=1)
    speed_m_s: float = Field(gt=0)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    faults: list[FaultInjection] = Field(default_factory=list)
    modes: list[Literal["SensorBased", "TargetBased", "SlamBased"]] = Field(
        default_factory=lambda: ["SensorBased"]
    )

    @model_validator(mode="after")
    def _faults_disjoint_per_kind(self):
        by_kind: dict[str, list[FaultInjection]] = {}
        for f in self.faults:
            by_kind.setdefault(f.kind, []).append(f)
        for kind, faults in by_kind.items():
            spans = sorted((f.start_s, f.start_s + f.duration_s) for f in faults)
            for (_, end_a), (start_b, _) in zip(spans, spans[1:]):
                if start_b < end_a:
                    raise ValueError(f"overlapping {kind} faults")
        return self

    @property
    def effective_client_id(self) -> str:
        return self.client_id or self.name


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ScenarioError(f"{path}: bad scenario field {loc}: {first['msg']}") from None


# -- trajectory ----------------------------------------------------------


@dataclass(frozen=True)
class TruthSample:
    t_s: float
    position: LocalPosition  # camera position (eye height included)
    heading_deg: float

    @property
    def pose(self) -> LocalPose:
        return LocalPose(self.position, heading_to_orientation(self.heading_deg))


class Trajectory:
    """Piecewise-linear walk through the scenario waypoints."""

    def __init__(self, scenario: Scenario, anchor: FrameAnchor):
        self.anchor = anchor
        points = [
            geo_to_local(anchor, GeoPosition(w.lat, w.lon, w.height)) for w in scenario.path
        ]
        # (start_s, end_s, from, to, heading); dwells are zero-motion legs
        self.legs: list[tuple[float, float, LocalPosition, LocalPosition, float]] = []
        t = 0.0
        heading = 0.0
        for i, p in enumerate(points):
            dwell = scenario.path[i].dwell_s
            if dwell > 0:
                self.legs.append((t, t + dwell, p, p, heading))
                t += dwell
            if i + 1 < len(points):
                q = points[i + 1]
                d = q - p
                length = math.hypot(d.x_m, d.z_m) or d.norm()
                heading = math.degrees(math.atan2(d.x_m, d.z_m)) if length > 0 else heading
                seg_t = d.norm() / scenario.speed_m_s
                if seg_t > 0:
                    self.legs.append((t, t + seg_t, p, q, heading))
                    t += seg_t
        self.duration_s = t
        self._points = points
        self._final_heading = heading

    def sample(self, t_s: float) -> TruthSample:
        t_s = min(max(t_s, 0.0), self.duration_s)
        pos, heading = self._points[-1], self._final_heading
        for start, end, a, b, h in self.legs:
            if t_s <= end:
                frac = 0.0 if end == start else (t_s - start) / (end - start)
                pos = a + (b - a).scaled(frac)
                heading = h
                break
        eye = LocalPosition(pos.x_m, pos.y_m + EYE_HEIGHT_M, pos.z_m)
        return TruthSample(t_s, eye, heading)


# -- detection synthesis -------------------------------------------------


def synthesize_target_detection(
    camera_world: LocalPose,
    fiducial_world: LocalPose,
    fiducial_scale: tuple[float, float, float],
    fiducial_id: str,
    rng: Optional[np.random.Generator] = None,
    rot_sigma_deg: float = 0.0,
    max_range_m: float = DETECT_RANGE_M,
    max_half_angle_deg: float = DETECT_HALF_ANGLE_DEG,
) -> Optional[TargetPayload]:
    """Fiducial detection from ground truth, or None outside the gate."""
    to_fid = fiducial_world.position - camera_world.position
    dist = to_fid.norm()
    if dist > max_range_m or dist == 0.0:
        return None
    forward = camera_world.orientation.rotate(LocalPosition(0, 0, 1))
    cos_angle = (
        forward.x_m * to_fid.x_m + forward.y_m * to_fid.y_m + forward.z_m * to_fid.z_m
    ) / dist
    if cos_angle < math.cos(math.radians(max_half_angle_deg)):
        return None
    observed = camera_world
    if rng is not None and rot_sigma_deg > 0:
        axis = rng.normal(size=3)
        angle = math.radians(rng.normal(0.0, rot_sigma_deg))
        wobble = Orientation.from_axis_angle(tuple(axis), angle)
        observed = LocalPose(camera_world.position, wobble.multiply(camera_world.orientation))
    rel = relative_detection(fiducial_world, fiducial_scale, observed)
    return TargetPayload(fiducial_id=fiducial_id, relative_pose=rel, confidence=1.0)


# -- transports ----------------------------------------------------------


class InProcessTransport:
    """Feeds a Session directly; now_ms is the caller's logical clock."""

    def __init__(self, session: Session):
        self.session = session
        self._raw: list[bytes] = []
        self.conn_id = session.connect(self._raw.append)

    def send(self, data: bytes, now_ms: float) -> None:
        self.session.receive(self.conn_id, data, now_ms)

    def poll(self) -> list[Message]:
        out = [decode(b) for b in self._raw]
        self._raw.clear()
        return out

    def close(self, now_ms: float = 0.0) -> None:
        self.session.disconnect(self.conn_id, now_ms)


class WebSocketTransport:
    """Synchronous WebSocket client transport (text frames)."""

    def __init__(self, url: str, retries: int = 3, retry_delay_s: float = 0.5):
        from websockets.sync.client import connect

        last_error: Optional[Exception] = None
        for attempt in range(retries):
            try:
                self._ws = connect(url)
                break
            except OSError as e:
                last_error = e
                if attempt + 1 < retries:
                    time.sleep(retry_delay_s)
        else:
            raise ScenarioError(f"cannot connect to {url} after {retries} attempts: {last_error}")

    def send(self, data: bytes, now_ms: float) -> None:
        self._ws.send(data.decode("utf-8"))

    def poll(self) -> list[Message]:
        out = []
        while True:
            try:
                frame = self._ws.recv(timeout=0)
            except TimeoutError:
                break
            except Exception:
                break
            if isinstance(frame, str):
                frame = frame.encode("utf-8")
            out.append(decode(frame))
        return out

    def close(self, now_ms: float = 0.0) -> None:
        try:
            self._ws.close()
        except Exception:
            pass


# -- the client ----------------------------------------------------------


@dataclass
class SessionLog:
    scenario: str
    client_id: str
    truth: list[dict] = field(default_factory=list)
    sent: list[dict] = field(default_factory=list)
    received: list[dict] = field(default_factory=list)

    def to_ldjson(self) -> str:
        lines = []
        for kind, records in (("truth", self.truth), ("sent", self.sent), ("recv", self.received)):
            for r in records:
                lines.append(
                    json.dumps(
                        {"scenario": self.scenario, "client_id": self.client_id, "kind": kind, **r},
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                )
        return "\n".join(lines) + "\n"


class ScenarioClient:
    """Steps one scenario against a transport on a shared logical clock."""

    def __init__(
        self,
        scenario: Scenario,
        transport,
        project: Optional[Project] = None,
        anchor: Optional[FrameAnchor] = None,
    ):
        self.scenario = scenario
        self.transport = transport
        if anchor is None:
            if project is not None:
                anchor = project.anchor
            else:
                w = scenario.path[0]
                anchor = make_anchor(GeoPosition(w.lat, w.lon, w.height))
        self.anchor = anchor
        self.trajectory = Trajectory(scenario, anchor)
        self.rng = np.random.default_rng(scenario.noise.seed)
        self.log = SessionLog(scenario.name, scenario.effective_client_id)
        self._fiducials = []
        if project is not None and "TargetBased" in scenario.modes:
            self._fiducials = [
                (
                    item.id,
                    LocalPose(project.item_local_position(item), item.orientation),
                    item.scale,
                )
                for item in project.list_items()
                if item.kind is ContentKind.FIDUCIAL
            ]
        self._seq = 0
        self._imu_step = 0
        self._gps_step = 0
        self._telemetry_step = 0
        self._heading_error_deg = 0.0
        self._prev_truth: Optional[TruthSample] = None
        self._last_accuracy = max(0.5, 2.0 * scenario.noise.gps_sigma_m)
        self._started = False
        self._finished = False

    # timing helpers: event times come from integer counters so replays
    # are bit-exact
    @property
    def duration_s(self) -> float:
        return self.trajectory.duration_s

    def _send(self, body, t_s: float) -> None:
        self._seq += 1
        self.transport.send(encode(Message(seq=self._seq, body=body)), t_s * 1000.0)
        self.log.sent.append({"t_ms": t_s * 1000.0, "tag": body.TAG})

    def start(self) -> None:
        self._send(
            ClientHello(client_id=self.scenario.effective_client_id, profile=self.scenario.profile),
            0.0,
        )
        self._started = True

    def _dropout(self, mode: str, t_s: float) -> bool:
        return any(
            f.kind == "Dropout" and f.mode == mode and f.active(t_s)
            for f in self.scenario.faults
        )

    def step_to(self, t_s: float) -> None:
        """Emit every event scheduled up to and including t_s."""
        assert self._started
        noise = self.scenario.noise
        imu_dt = 1.0 / noise.imu_rate_hz
        while self._imu_step * imu_dt <= t_s + 1e-12:
            step_t = self._imu_step * imu_dt
            # geo roundtrips perturb the duration by ~1e-10 s; don't let that
            # drop the final frame
            if step_t > self.duration_s + 1e-6:
                break
            self._imu_tick(step_t, imu_dt)
            self._imu_step += 1

    def _imu_tick(self, t_s: float, dt_s: float) -> None:
        noise = self.scenario.noise
        truth = self.trajectory.sample(t_s)
        self.log.truth.append(
            {
                "t_ms": t_s * 1000.0,
                "position": list(truth.position.as_tuple()),
                "heading_deg": truth.heading_deg,
            }
        )
        # gyro drift: model-level plus injected faults, accumulated per step
        drift_rate = noise.gyro_drift_deg_s + sum(
            f.deg_s for f in self.scenario.faults if f.kind == "GyroDrift" and f.active(t_s)
        )
        self._heading_error_deg += drift_rate * dt_s

        # gps fixes first: their timestamps trail the frame clock
        gps_dt = 1.0 / noise.gps_rate_hz
        while self._gps_step * gps_dt <= t_s + 1e-12:
            gps_t = self._gps_step * gps_dt
            self._gps_step += 1
            if "SensorBased" in self.scenario.modes and not self._dropout("SensorBased", gps_t):
                self._emit_sensor(gps_t, self.trajectory.sample(gps_t))

        if "SlamBased" in self.scenario.modes and not self._dropout("SlamBased", t_s):
            if self._prev_truth is not None:
                self._emit_slam(t_s, self._prev_truth, truth)
        self._prev_truth = truth

        # target detections run per camera frame, not at gps cadence
        if self._fiducials and not self._dropout("TargetBased", t_s):
            self._emit_target(t_s, truth)

        while self._telemetry_step * 1.0 <= t_s + 1e-12:
            tel_t = float(self._telemetry_step)
            self._telemetry_step += 1
            self._emit_telemetry(tel_t, self.trajectory.sample(tel_t))

        for msg in self.transport.poll():
            self.log.received.append({"t_ms": t_s * 1000.0, "tag": msg.tag, "seq": msg.seq})

    def _observed_heading(self, truth: TruthSample) -> float:
        return truth.heading_deg + self.scenario.noise.compass_bias_deg + self._heading_error_deg

    def _emit_sensor(self, t_s: float, truth: TruthSample) -> None:
        noise = self.scenario.noise
        east, north = 0.0, 0.0
        if noise.gps_sigma_m > 0:
            east, north = self.rng.normal(0.0, noise.gps_sigma_m, size=2)
        for f in self.scenario.faults:
            if f.kind == "GpsBias" and f.active(t_s):
                east += f.offset_m[0]
                north += f.offset_m[1]
        noisy = LocalPosition(
            truth.position.x_m + east, truth.position.y_m, truth.position.z_m + north
        )
        geo = local_to_geo(self.anchor, noisy)
        self._send(
            PoseUpdate(
                client_id=self.scenario.effective_client_id,
                evidence=EvidenceModel(
                    mode="SensorBased",
                    timestamp_ms=t_s * 1000.0,
                    sensor={
                        "geo": {
                            "lat": geo.latitude_deg,
                            "lon": geo.longitude_deg,
                            "height": geo.height_m,
                        },
                        "horizontal_accuracy_m": self._last_accuracy,
                        "orientation": list(
                            heading_to_orientation(self._observed_heading(truth)).as_tuple()
                        ),
                    },
                ),
            ),
            t_s,
        )

    def _emit_slam(self, t_s: float, prev: TruthSample, now: TruthSample) -> None:
        # delta expressed in the previous camera frame
        prev_pose, now_pose = prev.pose, now.pose
        delta = compose(inverse(prev_pose), now_pose)
        self._send(
            PoseUpdate(
                client_id=self.scenario.effective_client_id,
                evidence=EvidenceModel(
                    mode="SlamBased",
                    timestamp_ms=t_s * 1000.0,
                    slam={
                        "delta_pose": {
                            "position": list(delta.position.as_tuple()),
                            "orientation": list(delta.orientation.as_tuple()),
                        },
                        "tracking_quality": 1.0,
                    },
                ),
            ),
            t_s,
        )

    def _emit_target(self, t_s: float, truth: TruthSample) -> None:
        # vision-based: detections come from the true camera pose, not the
        # compass-corrupted one
        for fid, world, scale in self._fiducials:
            detection = synthesize_target_detection(
                LocalPose(truth.position, truth.pose.orientation),
                world,
                scale,
                fid,
                rng=self.rng,
                rot_sigma_deg=self.scenario.noise.target_rot_sigma_deg,
            )
            if detection is None:
                continue
            self._send(
                PoseUpdate(
                    client_id=self.scenario.effective_client_id,
                    evidence=EvidenceModel(
                        mode="TargetBased",
                        timestamp_ms=t_s * 1000.0,
                        target={
                            "fiducial_id": detection.fiducial_id,
                            "relative_pose": {
                                "position": list(detection.relative_pose.position.as_tuple()),
                                "orientation": list(
                                    detection.relative_pose.orientation.as_tuple()
                                ),
                            },
                            "confidence": detection.confidence,
                        },
                    ),
                ),
                t_s,
            )
            break

    def _emit_telemetry(self, t_s: float, truth: TruthSample) -> None:
        geo = local_to_geo(self.anchor, truth.position)
        self._send(
            Telemetry(
                client_id=self.scenario.effective_client_id,
                render_fps=60.0,
                tracking_fps=self.scenario.noise.imu_rate_hz,
                active_mode=self.scenario.modes[0],
                horizontal_accuracy_m=self._last_accuracy,
                actual_geo=GeoModel(
                    lat=geo.latitude_deg, lon=geo.longitude_deg, height=geo.height_m
                ),
                actual_orientation=truth.pose.orientation.as_tuple(),
            ),
            t_s,
        )

    def finish(self, close: bool = True) -> SessionLog:
        if not self._finished:
            for msg in self.transport.poll():
                self.log.received.append(
                    {"t_ms": self.duration_s * 1000.0, "tag": msg.tag, "seq": msg.seq}
                )
            if close:
                self.transport.close(self.duration_s * 1000.0)
            self._finished = True
        return self.log


def run_scenario(
    scenario: Scenario,
    transport,
    project: Optional[Project] = None,
    anchor: Optional[FrameAnchor] = None,
    realtime: bool = False,
    close: bool = True,
) -> SessionLog:
    """Run one scenario to completion and return its replayable log."""
    client = ScenarioClient(scenario, transport, project=project, anchor=anchor)
    client.start()
    dt = 1.0 / scenario.noise.imu_rate_hz
    steps = int(math.ceil(client.duration_s / dt)) + 1
    for i in range(steps):
        if realtime:
            time.sleep(dt)
        client.step_to(i * dt)
    return client.finish(close=close)


class SimulatedFleet:
    """Locksteps N in-process clients plus the server tick on one logical clock."""

    def __init__(
        self,
        session: Session,
        scenarios: list[Scenario],
        project: Optional[Project] = None,
        events: Optional[list[tuple[float, Callable[[], None]]]] = None,
    ):
        self.session = session
        self.clients = [
            ScenarioClient(s, InProcessTransport(session), project=project or session.project)
            for s in scenarios
        ]
        # (t_s, fn) pairs fired once when the clock passes t_s
        self._events = sorted(events or [], key=lambda e: e[0])
        self._tick_step = 0

    def run(self, close: bool = True) -> list[SessionLog]:
        for client in self.clients:
            client.start()
        duration = max(c.duration_s for c in self.clients)
        dt = 1.0 / max(c.scenario.noise.imu_rate_hz for c in self.clients)
        tick_dt = 1.0 / self.session.config.tick_hz
        steps = int(math.ceil(duration / dt)) + 1
        for i in range(steps):
            t = i * dt
            while self._events and self._events[0][0] <= t:
                self._events.pop(0)[1]()
            for client in self.clients:
                client.step_to(t)
            while self._tick_step * tick_dt <= t + 1e-12:
                self.session.tick(self._tick_step * tick_dt * 1000.0)
                self._tick_step += 1
        return [c.finish(close=close) for c in self.clients]


OBSERVER_PROFILE = ProfileModel(
    model="Console",
    os="web",
    screen_w_px=1920,
    screen_h_px=1080,
    camera_vfov_deg=60.0,
    camera_res_w_px=1920,
    camera_res_h_px=1080,
)


class MonitoringObserver:
    """Designer-role connection that records monitoring frames and deltas."""

    def __init__(self, transport, client_id: str = "observer", auth_token: Optional[str] = None):
        self.transport = transport
        self.frames: list[MonitoringFrame] = []
        self.deltas: list[ContentDelta] = []
        self.snapshots: list[ContentSnapshot] = []
        transport.send(
            encode(
                Message(
                    seq=1,
                    body=ClientHello(
                        client_id=client_id,
                        profile=OBSERVER_PROFILE,
                        role="designer",
                        auth_token=auth_token,
                    ),
                )
            ),
            0.0,
        )

    def poll(self) -> None:
        for msg in self.transport.poll():
            body = msg.body
            if isinstance(body, MonitoringFrame):
                self.frames.append(body)
            elif isinstance(body, ContentDelta):
                self.deltas.append(body)
            elif isinstance(body, ContentSnapshot):
                self.snapshots.append(body)

    def close(self, now_ms: float = 0.0) -> None:
        self.poll()
        self.transport.close(now_ms)


def summarize_frames(frames: list[MonitoringFrame]) -> dict[str, dict]:
    """Per-client roll-up of a monitoring frame stream.

    Positional error is the server's own fused-vs-reported divergence, so
    the same computation works in-process and over a live socket.
    """
    stats: dict[str, dict] = {}
    for frame in frames:
        for user in frame.users:
            s = stats.setdefault(
                user.client_id,
                {"frames": 0, "errors": [], "verdicts": {}},
            )
            s["frames"] += 1
            if user.divergence is not None:
                s["errors"].append(user.divergence.positional_error_m)
                v = user.divergence.verdict
                s["verdicts"][v] = s["verdicts"].get(v, 0) + 1
    out = {}
    for client_id, s in sorted(stats.items()):
        errors = s.pop("errors")
        s["mean_positional_error_m"] = sum(errors) / len(errors) if errors else None
        out[client_id] = s
    return out


def run_fleet_ws(
    scenarios: list[Scenario],
    url: str,
    project: Optional[Project] = None,
) -> list[SessionLog]:
    """Run scenarios concurrently against a live server over WebSockets."""
    logs: list[Optional[SessionLog]] = [None] * len(scenarios)
    errors: list[Exception] = []

    def worker(idx: int, scenario: Scenario) -> None:
        try:
            transport = WebSocketTransport(url)
            logs[idx] = run_scenario(scenario, transport, project=project, realtime=True)
        except Exception as e:  # surfaced to the caller below
            errors.append(e)

    threads = [
        threading.Thread(target=worker, args=(i, s), daemon=True)
        for i, s in enumerate(scenarios)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise ScenarioError(f"{len(errors)} scenario(s) failed: {errors[0]}")
    return [log for log in logs if log is not None]
