"""Tracking abstraction: fuse heterogeneous pose evidence into one global camera pose.

Three evidence sources (device sensors, fiducial detections, SLAM deltas)
are arbitrated into a single camera pose in the anchored local frame,
with an accuracy estimate and smoothed transitions between sources.
Priority among fresh evidence: target > SLAM > sensor; SLAM is only
preferred over sensors near virtual content (with hysteresis).  All
state is driven by evidence timestamps, never the wall clock, so
identical evidence sequences replay to identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .geo import (
    FrameAnchor,
    GeoPosition,
    LocalPose,
    LocalPosition,
    Orientation,
    compose,
    geo_to_local,
    inverse,
)


class TrackingError(Exception):
    pass


class EvidenceRegressionError(TrackingError):
    """Evidence timestamp ran backwards for a client."""


class UnknownFiducialError(TrackingError):
    pass


class TrackingMode(str, Enum):
    SENSOR = "SensorBased"
    TARGET = "TargetBased"
    SLAM = "SlamBased"


@dataclass(frozen=True)
class SensorPayload:
    geo: GeoPosition
    horizontal_accuracy_m: float
    orientation: Orientation

    def __post_init__(self):
        if not self.horizontal_accuracy_m > 0:
            raise TrackingError(
                f"horizontal_accuracy_m must be positive: {self.horizontal_accuracy_m}"
            )


@dataclass(frozen=True)
class TargetPayload:
    """Fiducial detection.

    relative_pose is the camera pose in the fiducial's frame with the
    translation in detector units (multiples of the fiducial's stored
    width); it is rescaled to meters against the registry entry.
    """

    fiducial_id: str
    relative_pose: LocalPose
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise TrackingError(f"confidence out of [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class SlamPayload:
    delta_pose: LocalPose  # metric delta since the previous SLAM frame
    tracking_quality: float

    def __post_init__(self):
        if not 0.0 <= self.tracking_quality <= 1.0:
            raise TrackingError(f"tracking_quality out of [0, 1]: {self.tracking_quality}")


@dataclass(frozen=True)
class PoseEvidence:
    mode: TrackingMode
    timestamp_ms: float
    payload: SensorPayload | TargetPayload | SlamPayload


@dataclass(frozen=True)
class FusedPose:
    pose: LocalPose
    horizontal_accuracy_m: Optional[float]  # None until the first sensor fix
    active_mode: TrackingMode
    blend_weight: float  # 1 = fully in active_mode


@dataclass(frozen=True)
class FusionConfig:
    staleness_ms: float = 500.0
    transition_ms: float = 1000.0
    near_m: float = 30.0
    hysteresis_m: float = 5.0
    slam_drift_m_per_s: float = 0.1
    target_accuracy_floor_m: float = 0.5


def infer_camera_from_fiducial(
    fiducial_world: LocalPose,
    fiducial_scale: tuple[float, float, float],
    detection: TargetPayload,
) -> LocalPose:
    """Absolute camera pose from a relative fiducial detection."""
    width = fiducial_scale[0]
    if not width > 0:
        raise TrackingError(f"fiducial width must be positive: {width}")
    rel = LocalPose(
        detection.relative_pose.position.scaled(width),
        detection.relative_pose.orientation,
    )
    return compose(fiducial_world, rel)


def relative_detection(
    fiducial_world: LocalPose,
    fiducial_scale: tuple[float, float, float],
    camera_world: LocalPose,
) -> LocalPose:
    """Inverse of infer_camera_from_fiducial: camera in fiducial frame, detector units."""
    rel = compose(inverse(fiducial_world), camera_world)
    return LocalPose(rel.position.scaled(1.0 / fiducial_scale[0]), rel.orientation)


# resolver: fiducial_id -> (world pose, scale); raises KeyError when unknown
FiducialResolver = Callable[[str], tuple[LocalPose, tuple[float, float, float]]]


@dataclass
class _Transition:
    start_ms: float
    from_pose: LocalPose


class FusionState:
    """Per-client fusion state; feed evidence in timestamp order via ingest()."""

    def __init__(
        self,
        anchor: FrameAnchor,
        config: FusionConfig = FusionConfig(),
        fiducials: Optional[FiducialResolver] = None,
        content_positions: Optional[Callable[[], list[LocalPosition]]] = None,
    ):
        self.anchor = anchor
        self.config = config
        self._fiducials = fiducials
        self._content_positions = content_positions
        self._last_ts: Optional[float] = None
        self._fresh_ts: dict[TrackingMode, float] = {}
        self._sensor_pose: Optional[LocalPose] = None
        self._sensor_accuracy: Optional[float] = None
        self._sensor_fix_ts: Optional[float] = None
        self._target_pose: Optional[LocalPose] = None
        self._slam_pose: Optional[LocalPose] = None
        self._slam_near_content = False
        self._active_mode: Optional[TrackingMode] = None
        self._transition: Optional[_Transition] = None
        self._last_output: Optional[FusedPose] = None

    @property
    def last_output(self) -> Optional[FusedPose]:
        return self._last_output

    def ingest(self, evidence: PoseEvidence) -> FusedPose:
        t = evidence.timestamp_ms
        if self._last_ts is not None and t < self._last_ts:
            raise EvidenceRegressionError(
                f"timestamp {t} regresses below {self._last_ts}"
            )
        self._last_ts = t
        self._absorb(evidence)
        return self._fuse(t)

    def _absorb(self, evidence: PoseEvidence) -> None:
        t = evidence.timestamp_ms
        payload = evidence.payload
        if evidence.mode is TrackingMode.SENSOR:
            if not isinstance(payload, SensorPayload):
                raise TrackingError("SensorBased evidence requires a SensorPayload")
            self._sensor_pose = LocalPose(
                geo_to_local(self.anchor, payload.geo), payload.orientation
            )
            self._sensor_accuracy = payload.horizontal_accuracy_m
            self._sensor_fix_ts = t
            if self._active_mode is not TrackingMode.SLAM:
                self._slam_pose = self._sensor_pose
        elif evidence.mode is TrackingMode.TARGET:
            if not isinstance(payload, TargetPayload):
                raise TrackingError("TargetBased evidence requires a TargetPayload")
            if self._fiducials is None:
                raise UnknownFiducialError(payload.fiducial_id)
            try:
                world, scale = self._fiducials(payload.fiducial_id)
            except KeyError:
                raise UnknownFiducialError(payload.fiducial_id) from None
            self._target_pose = infer_camera_from_fiducial(world, scale, payload)
            if self._active_mode is not TrackingMode.SLAM:
                self._slam_pose = self._target_pose
        elif evidence.mode is TrackingMode.SLAM:
            if not isinstance(payload, SlamPayload):
                raise TrackingError("SlamBased evidence requires a SlamPayload")
            if self._slam_pose is not None:
                # deltas accumulate onto the last absolute fix
                self._slam_pose = compose(self._slam_pose, payload.delta_pose)
        self._fresh_ts[evidence.mode] = t

    def _candidate(self, mode: TrackingMode) -> Optional[LocalPose]:
        return {
            TrackingMode.SENSOR: self._sensor_pose,
            TrackingMode.TARGET: self._target_pose,
            TrackingMode.SLAM: self._slam_pose,
        }[mode]

    def _slam_preferred(self) -> bool:
        """Hysteretic 'near virtual content' gate for GPS -> SLAM handover."""
        if self._content_positions is None:
            return True
        if self._last_output is None:
            return False
        here = self._last_output.pose.position
        positions = self._content_positions()
        if not positions:
            return False
        nearest = min(here.distance_to(p) for p in positions)
        limit = (
            self.config.near_m + self.config.hysteresis_m
            if self._slam_near_content
            else self.config.near_m
        )
        self._slam_near_content = nearest <= limit
        return self._slam_near_content

    def _desired_mode(self, t: float) -> Optional[TrackingMode]:
        fresh = {
            m for m, ts in self._fresh_ts.items() if t - ts <= self.config.staleness_ms
        }
        if TrackingMode.TARGET in fresh and self._target_pose is not None:
            return TrackingMode.TARGET
        slam_ok = TrackingMode.SLAM in fresh and self._slam_pose is not None
        sensor_ok = TrackingMode.SENSOR in fresh and self._sensor_pose is not None
        if slam_ok and (self._slam_preferred() or not sensor_ok):
            return TrackingMode.SLAM
        if sensor_ok:
            return TrackingMode.SENSOR
        return self._active_mode

    def _fuse(self, t: float) -> FusedPose:
        desired = self._desired_mode(t)
        if desired is None:
            raise TrackingError("no usable evidence yet")
        candidate = self._candidate(desired)
        assert candidate is not None
        if self._active_mode is None:
            self._active_mode = desired
        elif desired is not self._active_mode:
            # restart the blend from wherever the output currently is
            from_pose = (
                self._last_output.pose if self._last_output is not None else candidate
            )
            self._transition = _Transition(start_ms=t, from_pose=from_pose)
            self._active_mode = desired

        blend = 1.0
        pose = candidate
        tr = self._transition
        if tr is not None:
            alpha = (t - tr.start_ms) / self.config.transition_ms
            if alpha >= 1.0:
                self._transition = None
            else:
                blend = alpha
                pose = LocalPose(
                    tr.from_pose.position
                    + (candidate.position - tr.from_pose.position).scaled(alpha),
                    tr.from_pose.orientation.slerp(candidate.orientation, alpha),
                )
        out = FusedPose(
            pose=pose,
            horizontal_accuracy_m=self._accuracy(t),
            active_mode=self._active_mode,
            blend_weight=blend,
        )
        self._last_output = out
        return out

    def _accuracy(self, t: float) -> Optional[float]:
        if self._sensor_accuracy is None:
            return None  # unknown before the first fix
        if self._active_mode is TrackingMode.TARGET:
            return self.config.target_accuracy_floor_m
        if self._active_mode is TrackingMode.SLAM:
            assert self._sensor_fix_ts is not None
            elapsed_s = (t - self._sensor_fix_ts) / 1000.0
            return self._sensor_accuracy + self.config.slam_drift_m_per_s * elapsed_s
        return self._sensor_accuracy

    def accuracy_of(self) -> Optional[float]:
        if self._last_ts is None:
            return None
        return self._accuracy(self._last_ts)
