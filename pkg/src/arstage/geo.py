"""Geodetic anchoring and rigid-pose math.

A local Cartesian frame is anchored at an Earth origin; all content and
camera poses live in that frame.  Conventions:

* WGS84 ellipsoid, exact geodetic -> ECEF -> tangent-frame chain.
* Local axes: x = East, y = Up, z = North.  1 unit = 1 meter.
* Orientations are unit quaternions (w, x, y, z), renormalized after
  every composition.  Heading 0 faces +z (North), heading 90 faces +x
  (East).  Angles cross the API in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# WGS84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

QUAT_NORM_TOL = 1e-9


class GeoValidationError(ValueError):
    """Raised for out-of-range or non-finite geodetic coordinates."""


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise GeoValidationError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class GeoPosition:
    """Geodetic coordinates: degrees latitude/longitude, meters above the ellipsoid."""

    latitude_deg: float
    longitude_deg: float
    height_m: float = 0.0

    def __post_init__(self):
        _require_finite("latitude_deg", self.latitude_deg)
        _require_finite("longitude_deg", self.longitude_deg)
        _require_finite("height_m", self.height_m)
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise GeoValidationError(
                f"latitude_deg out of [-90, 90]: {self.latitude_deg}"
            )
        # normalize longitude into (-180, 180]
        lon = math.fmod(self.longitude_deg, 360.0)
        if lon <= -180.0:
            lon += 360.0
        elif lon > 180.0:
            lon -= 360.0
        object.__setattr__(self, "longitude_deg", lon)


@dataclass(frozen=True)
class LocalPosition:
    """Point in the anchored local frame, meters."""

    x_m: float
    y_m: float
    z_m: float

    def __post_init__(self):
        _require_finite("local position", self.x_m, self.y_m, self.z_m)

    def __add__(self, other: "LocalPosition") -> "LocalPosition":
        return LocalPosition(self.x_m + other.x_m, self.y_m + other.y_m, self.z_m + other.z_m)

    def __sub__(self, other: "LocalPosition") -> "LocalPosition":
        return LocalPosition(self.x_m - other.x_m, self.y_m - other.y_m, self.z_m - other.z_m)

    def scaled(self, k: float) -> "LocalPosition":
        return LocalPosition(self.x_m * k, self.y_m * k, self.z_m * k)

    def norm(self) -> float:
        return math.sqrt(self.x_m**2 + self.y_m**2 + self.z_m**2)

    def distance_to(self, other: "LocalPosition") -> float:
        return (self - other).norm()

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x_m, self.y_m, self.z_m)


@dataclass(frozen=True)
class Orientation:
    """Unit quaternion (w, x, y, z); renormalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        _require_finite("quaternion", self.w, self.x, self.y, self.z)
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise GeoValidationError("zero-norm quaternion")
        if abs(n - 1.0) > 0.0:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "Orientation":
        return Orientation(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis: tuple[float, float, float], angle_rad: float) -> "Orientation":
        ax, ay, az = axis
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n < 1e-12:
            raise GeoValidationError("zero-length rotation axis")
        s = math.sin(angle_rad / 2.0) / n
        return Orientation(math.cos(angle_rad / 2.0), ax * s, ay * s, az * s)

    def multiply(self, other: "Orientation") -> "Orientation":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Orientation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Orientation":
        return Orientation(self.w, -self.x, -self.y, -self.z)

    def rotate(self, p: LocalPosition) -> LocalPosition:
        # v' = q v q*
        w, x, y, z = self.w, self.x, self.y, self.z
        vx, vy, vz = p.x_m, p.y_m, p.z_m
        # t = 2 * cross(q.xyz, v)
        tx = 2.0 * (y * vz - z * vy)
        ty = 2.0 * (z * vx - x * vz)
        tz = 2.0 * (x * vy - y * vx)
        return LocalPosition(
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        )

    def angle_to(self, other: "Orientation") -> float:
        """Geodesic angle between two orientations, degrees."""
        d = self.conjugate().multiply(other)
        # atan2 form stays accurate near zero where acos degenerates
        vec = math.sqrt(d.x**2 + d.y**2 + d.z**2)
        return math.degrees(2.0 * math.atan2(vec, abs(d.w)))

    def slerp(self, other: "Orientation", t: float) -> "Orientation":
        dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
        ow, ox, oy, oz = other.w, other.x, other.y, other.z
        if dot < 0.0:  # take the short arc
            dot, ow, ox, oy, oz = -dot, -ow, -ox, -oy, -oz
        if dot > 1.0 - 1e-12:
            return Orientation(
                self.w + t * (ow - self.w),
                self.x + t * (ox - self.x),
                self.y + t * (oy - self.y),
                self.z + t * (oz - self.z),
            )
        theta = math.acos(dot)
        sa = math.sin((1.0 - t) * theta) / math.sin(theta)
        sb = math.sin(t * theta) / math.sin(theta)
        return Orientation(
            sa * self.w + sb * ow,
            sa * self.x + sb * ox,
            sa * self.y + sb * oy,
            sa * self.z + sb * oz,
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)


@dataclass(frozen=True)
class LocalPose:
    """Rigid transform in the local frame: p_world = R * p_local + t."""

    position: LocalPosition
    orientation: Orientation

    @staticmethod
    def identity() -> "LocalPose":
        return LocalPose(LocalPosition(0.0, 0.0, 0.0), Orientation.identity())


def compose(a: LocalPose, b: LocalPose) -> LocalPose:
    """Transform composition: (a . b) applies b first, then a."""
    return LocalPose(
        a.position + a.orientation.rotate(b.position),
        a.orientation.multiply(b.orientation),
    )


def inverse(a: LocalPose) -> LocalPose:
    qi = a.orientation.conjugate()
    return LocalPose(qi.rotate(a.position).scaled(-1.0), qi)


def transform_point(a: LocalPose, p: LocalPosition) -> LocalPosition:
    return a.position + a.orientation.rotate(p)


def heading_to_orientation(
    heading_deg: float, pitch_deg: float = 0.0, roll_deg: float = 0.0
) -> Orientation:
    """Compass heading/pitch/roll to an orientation.

    Heading 0 points the forward axis (+z) North, 90 East.  Positive
    pitch tilts the forward axis up; roll turns about the forward axis.
    Applied roll first, then pitch, then heading.
    """
    _require_finite("angles", heading_deg, pitch_deg, roll_deg)
    q_yaw = Orientation.from_axis_angle((0.0, 1.0, 0.0), math.radians(heading_deg))
    q_pitch = Orientation.from_axis_angle((1.0, 0.0, 0.0), -math.radians(pitch_deg))
    q_roll = Orientation.from_axis_angle((0.0, 0.0, 1.0), math.radians(roll_deg))
    return q_yaw.multiply(q_pitch).multiply(q_roll)


def geodetic_to_ecef(p: GeoPosition) -> tuple[float, float, float]:
    lat = math.radians(p.latitude_deg)
    lon = math.radians(p.longitude_deg)
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    sin_lon, cos_lon = math.sin(lon), math.cos(lon)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return (
        (n + p.height_m) * cos_lat * cos_lon,
        (n + p.height_m) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + p.height_m) * sin_lat,
    )


def ecef_to_geodetic(x: float, y: float, z: float) -> GeoPosition:
    lon = math.atan2(y, x)
    hyp = math.hypot(x, y)
    # iterate latitude; converges to machine precision in a few steps
    lat = math.atan2(z, hyp * (1.0 - WGS84_E2))
    height = 0.0
    for _ in range(12):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        height = hyp / math.cos(lat) - n if abs(lat) < math.radians(89.999) else z / sin_lat - n * (1.0 - WGS84_E2)
        lat_new = math.atan2(z, hyp * (1.0 - WGS84_E2 * n / (n + height)))
        if abs(lat_new - lat) < 1e-15:
            lat = lat_new
            break
        lat = lat_new
    return GeoPosition(math.degrees(lat), math.degrees(lon), height)


@dataclass(frozen=True)
class FrameAnchor:
    """Local tangent frame fixed at an Earth origin.

    Basis rows are the East, Up and North unit vectors in ECEF, so the
    local frame is x=East, y=Up, z=North.
    """

    origin: GeoPosition
    origin_ecef: tuple[float, float, float] = field(init=False)
    east: tuple[float, float, float] = field(init=False)
    up: tuple[float, float, float] = field(init=False)
    north: tuple[float, float, float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "origin_ecef", geodetic_to_ecef(self.origin))
        lat = math.radians(self.origin.latitude_deg)
        lon = math.radians(self.origin.longitude_deg)
        sin_lat, cos_lat = math.sin(lat), math.cos(lat)
        sin_lon, cos_lon = math.sin(lon), math.cos(lon)
        object.__setattr__(self, "east", (-sin_lon, cos_lon, 0.0))
        object.__setattr__(
            self, "up", (cos_lat * cos_lon, cos_lat * sin_lon, sin_lat)
        )
        object.__setattr__(
            self, "north", (-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat)
        )


def make_anchor(origin: GeoPosition) -> FrameAnchor:
    return FrameAnchor(origin)


def geo_to_local(anchor: FrameAnchor, p: GeoPosition) -> LocalPosition:
    ex, ey, ez = geodetic_to_ecef(p)
    ox, oy, oz = anchor.origin_ecef
    dx, dy, dz = ex - ox, ey - oy, ez - oz
    e, u, n = anchor.east, anchor.up, anchor.north
    return LocalPosition(
        e[0] * dx + e[1] * dy + e[2] * dz,
        u[0] * dx + u[1] * dy + u[2] * dz,
        n[0] * dx + n[1] * dy + n[2] * dz,
    )


def local_to_geo(anchor: FrameAnchor, p: LocalPosition) -> GeoPosition:
    e, u, n = anchor.east, anchor.up, anchor.north
    ox, oy, oz = anchor.origin_ecef
    return ecef_to_geodetic(
        ox + p.x_m * e[0] + p.y_m * u[0] + p.z_m * n[0],
        oy + p.x_m * e[1] + p.y_m * u[1] + p.z_m * n[1],
        oz + p.x_m * e[2] + p.y_m * u[2] + p.z_m * n[2],
    )
