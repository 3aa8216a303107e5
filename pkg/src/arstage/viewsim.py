"""Device-perspective view simulation and tracking-fault diagnostics.

Given a camera pose and a device profile, computes which content the
device should be seeing (with screen-space boxes and presentation
issues), and compares expected against actual camera poses to classify
tracking faults as rotational (gyro/magnetic) or positional (GPS).

Camera convention: the camera looks along +z of its own frame, so an
identity orientation faces North.  Screen coordinates are normalized
[0,1]^2, origin top-left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

from shapely.geometry import Point as _ShapelyPoint
from shapely.geometry import Polygon as _ShapelyPolygon

from .geo import LocalPose, LocalPosition, inverse
from .registry import ContentItem, ContentKind, Project

NEAR_PLANE_M = 0.1
FAR_PLANE_M = 2000.0


class ViewsimError(Exception):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    model: str
    os: str
    screen_w_px: int
    screen_h_px: int
    camera_vfov_deg: float
    camera_res_w_px: int
    camera_res_h_px: int

    def __post_init__(self):
        if min(self.screen_w_px, self.screen_h_px, self.camera_res_w_px, self.camera_res_h_px) <= 0:
            raise ViewsimError("device dimensions must be positive")
        if not 10.0 < self.camera_vfov_deg < 170.0:
            raise ViewsimError(f"camera_vfov_deg out of (10, 170): {self.camera_vfov_deg}")

    @property
    def aspect(self) -> float:
        return self.screen_w_px / self.screen_h_px


@dataclass(frozen=True)
class ViewThresholds:
    too_close_m: float = 0.5
    unreadable_deg: float = 1.5
    overlap_frac: float = 0.3
    clutter_n: int = 8


@dataclass(frozen=True)
class DiagnosisThresholds:
    rot_deg: float = 10.0
    pos_m: float = 5.0


class IssueKind(str, Enum):
    NOT_VISIBLE = "NotVisible"
    TOO_CLOSE = "TooClose"
    UNREADABLE = "Unreadable"
    OVERLAP = "Overlap"
    CLUTTER = "Clutter"
    OFF_GROUND = "OffGround"


@dataclass(frozen=True)
class Issue:
    kind: IssueKind
    item_id: Optional[str] = None
    other_item_id: Optional[str] = None
    value: Optional[float] = None  # distance, angle, fraction or count


@dataclass(frozen=True)
class VisibleItem:
    item_id: str
    distance_m: float
    angular_height_deg: float
    screen_bbox: tuple[float, float, float, float]  # (u0, v0, u1, v1) in [0,1]^2


@dataclass(frozen=True)
class ViewReport:
    camera: LocalPose
    visible: list[VisibleItem]
    issues: list[Issue]


class Verdict(str, Enum):
    NOMINAL = "Nominal"
    ROTATIONAL_MISMATCH = "RotationalMismatch"
    POSITIONAL_MISMATCH = "PositionalMismatch"
    BOTH = "Both"


@dataclass(frozen=True)
class DivergenceReport:
    rotational_error_deg: float
    positional_error_m: float
    verdict: Verdict


def _as_pose(camera) -> LocalPose:
    # accepts a LocalPose or anything carrying one in .pose (FusedPose)
    return camera if isinstance(camera, LocalPose) else camera.pose


def frustum_test(camera, profile: DeviceProfile, point: LocalPosition) -> bool:
    """Perspective-frustum membership for a point."""
    pose = _as_pose(camera)
    p = inverse(pose).orientation.rotate(point - pose.position)
    if not NEAR_PLANE_M <= p.z_m <= FAR_PLANE_M:
        return False
    tv = math.tan(math.radians(profile.camera_vfov_deg) / 2.0)
    return abs(p.y_m) <= p.z_m * tv and abs(p.x_m) <= p.z_m * tv * profile.aspect


def _bounding_radius(item: ContentItem) -> float:
    sx, sy, sz = item.scale
    return 0.5 * math.sqrt(sx * sx + sy * sy + sz * sz)


def render_expected_view(
    camera,
    profile: DeviceProfile,
    project: Project,
    thresholds: ViewThresholds = ViewThresholds(),
) -> ViewReport:
    """What the device should be seeing, plus presentation issues.

    Visibility is a bounding-sphere frustum test with the sphere center
    in front of the near plane; tests are angular so that widening the
    FOV never removes an item.  Fiducials are never reported.
    """
    pose = _as_pose(camera)
    cam_inv = inverse(pose)
    tv = math.tan(math.radians(profile.camera_vfov_deg) / 2.0)
    th = tv * profile.aspect
    half_v = math.radians(profile.camera_vfov_deg) / 2.0
    half_h = math.atan(th)

    visible: list[VisibleItem] = []
    issues: list[Issue] = []
    for item in project.render_items():
        p = cam_inv.orientation.rotate(project.item_local_position(item) - pose.position)
        r = _bounding_radius(item)
        dist = math.sqrt(p.x_m**2 + p.y_m**2 + p.z_m**2)
        if p.z_m < NEAR_PLANE_M or p.z_m - r > FAR_PLANE_M:
            continue
        ang_r = math.asin(min(1.0, r / dist)) if dist > 0 else math.pi
        if math.atan2(abs(p.y_m), p.z_m) > half_v + ang_r:
            continue
        if math.atan2(abs(p.x_m), p.z_m) > half_h + ang_r:
            continue
        u = (p.x_m / (p.z_m * th) + 1.0) / 2.0
        v = (1.0 - p.y_m / (p.z_m * tv)) / 2.0
        hw = (item.scale[0] / 2.0) / (2.0 * p.z_m * th)
        hh = (item.scale[1] / 2.0) / (2.0 * p.z_m * tv)
        bbox = (u - hw, v - hh, u + hw, v + hh)
        if bbox[2] < 0.0 or bbox[0] > 1.0 or bbox[3] < 0.0 or bbox[1] > 1.0:
            continue
        angular_height = math.degrees(2.0 * math.atan((item.scale[1] / 2.0) / dist))
        visible.append(VisibleItem(item.id, dist, angular_height, bbox))
        if dist < thresholds.too_close_m:
            issues.append(Issue(IssueKind.TOO_CLOSE, item.id, value=dist))
        if angular_height < thresholds.unreadable_deg:
            issues.append(Issue(IssueKind.UNREADABLE, item.id, value=angular_height))

    for i, a in enumerate(visible):
        for b in visible[i + 1 :]:
            frac = _overlap_fraction(a.screen_bbox, b.screen_bbox)
            if frac > thresholds.overlap_frac:
                issues.append(Issue(IssueKind.OVERLAP, a.item_id, b.item_id, frac))
    if len(visible) > thresholds.clutter_n:
        issues.append(Issue(IssueKind.CLUTTER, value=float(len(visible))))
    return ViewReport(camera=pose, visible=visible, issues=issues)


def _overlap_fraction(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    smaller = min(area_a, area_b)
    return inter / smaller if smaller > 0 else 0.0


def diagnose(
    expected, actual, thresholds: DiagnosisThresholds = DiagnosisThresholds()
) -> DivergenceReport:
    """Classify expected-vs-actual camera divergence into a fault verdict."""
    e, a = _as_pose(expected), _as_pose(actual)
    rot = e.orientation.angle_to(a.orientation)
    pos = e.position.distance_to(a.position)
    rot_bad = rot > thresholds.rot_deg
    pos_bad = pos > thresholds.pos_m
    if rot_bad and pos_bad:
        verdict = Verdict.BOTH
    elif rot_bad:
        verdict = Verdict.ROTATIONAL_MISMATCH
    elif pos_bad:
        verdict = Verdict.POSITIONAL_MISMATCH
    else:
        verdict = Verdict.NOMINAL
    return DivergenceReport(rot, pos, verdict)


@dataclass(frozen=True)
class WalkablePolygon:
    name: str
    vertices: tuple[tuple[float, float], ...]  # (x, z) local-frame meters
    _shape: _ShapelyPolygon = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ViewsimError(f"polygon {self.name!r} needs at least 3 vertices")
        object.__setattr__(self, "_shape", _ShapelyPolygon(self.vertices))

    def covers(self, x: float, z: float) -> bool:
        # covers() is boundary-inclusive: points on an edge count as walkable
        return bool(self._shape.covers(_ShapelyPoint(x, z)))


def load_walkable(path: Union[str, Path]) -> list[WalkablePolygon]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ViewsimError(f"{path}: invalid JSON: {e.msg}") from e
    if not isinstance(data, list):
        raise ViewsimError("walkable file must be a JSON list of polygons")
    out = []
    for entry in data:
        try:
            out.append(
                WalkablePolygon(
                    str(entry["name"]),
                    tuple((float(x), float(z)) for x, z in entry["vertices"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ViewsimError(f"bad polygon entry {entry!r}: {e}") from e
    return out


def walkability_check(
    item: ContentItem,
    project: Project,
    walkable: Optional[Sequence[WalkablePolygon]],
) -> Optional[Issue]:
    """OffGround when the item's ground projection is outside every polygon.

    Returns None when walkable (or when no environment file was given,
    in which case the check is skipped).
    """
    if walkable is None or not walkable:
        return None
    p = project.item_local_position(item)
    if any(poly.covers(p.x_m, p.z_m) for poly in walkable):
        return None
    return Issue(IssueKind.OFF_GROUND, item.id)
