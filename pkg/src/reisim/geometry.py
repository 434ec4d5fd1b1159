"""Road scenarios, vehicle kinematics and antenna/tag geometry.

Frames: world x runs along the road at the start of a run, y points left,
z up. The vehicle frame has x forward and y to the left. Positive road
curvature turns the vehicle toward its right-hand roadside, which is where
sign tags sit, so the tag lies on the inside of the bend.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

MPH = 0.44704


class GeometryError(ValueError):
    """Raised on out-of-domain geometric inputs."""


class NeverInBeam(GeometryError):
    """The tag never enters the antenna beam along the trajectory."""


class Facing(str, enum.Enum):
    side_horizontal = "side_horizontal"
    downward = "downward"


class Side(str, enum.Enum):
    left = "left"
    right = "right"


class TagRole(str, enum.Enum):
    lane_marker = "lane_marker"
    traffic_sign = "traffic_sign"
    sensor_tag = "sensor_tag"


class ScenarioId(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    S6 = "S6"
    lane_straight = "lane_straight"
    lane_custom = "lane_custom"


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class AntennaMount:
    """Reader antenna placement on the vehicle.

    ``mount_angle_theta`` tilts the boresight forward from the direction
    perpendicular to the vehicle's longitudinal axis (side mounts) or from
    straight down (downward mounts). Side-facing mounts use a fan beam: the
    in-beam test compares azimuths in the horizontal plane only.
    """

    mount_angle_theta: float = math.radians(45.0)
    beamwidth_alpha: float = math.radians(60.0)
    height: float = 1.0
    lateral_offset: float = 0.0
    boresight_gain_dBi: float = 8.0
    facing: Facing = Facing.side_horizontal
    side: Side = Side.right
    taper_exponent: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.beamwidth_alpha < math.pi:
            raise GeometryError("beamwidth_alpha must lie in (0, pi)")
        if not 0.0 <= self.mount_angle_theta < math.pi / 2:
            raise GeometryError("mount_angle_theta must lie in [0, pi/2)")
        if self.beamwidth_alpha / 2 + self.mount_angle_theta >= math.pi / 2:
            raise GeometryError("beamwidth_alpha/2 + mount_angle_theta must stay below pi/2")
        if self.taper_exponent < 0:
            raise GeometryError("taper_exponent must be >= 0")

    def boresight_vehicle_frame(self) -> tuple[float, float, float]:
        s, c = math.sin(self.mount_angle_theta), math.cos(self.mount_angle_theta)
        if self.facing is Facing.downward:
            return (s, 0.0, -c)
        lat = c if self.side is Side.left else -c
        return (s, lat, 0.0)

    def gain_dBi(self, off_boresight: float) -> float:
        """Antenna gain toward a direction; -inf outside the beam."""
        if off_boresight > self.beamwidth_alpha / 2:
            return -math.inf
        if self.taper_exponent == 0.0:
            return self.boresight_gain_dBi
        return self.boresight_gain_dBi + 10.0 * self.taper_exponent * math.log10(
            max(math.cos(off_boresight), 1e-300)
        )


@dataclass(frozen=True)
class TagPlacement:
    position: tuple[float, float, float]
    role: TagRole = TagRole.traffic_sign
    epc_bits: int = 96
    user_memory_words: int = 0
    tag_id: str = "tag0"

    def __post_init__(self):
        if len(self.position) != 3:
            raise GeometryError("position must be (x, y, z)")
        if self.position[2] < 0:
            raise GeometryError("tag z must be >= 0")
        if self.role is TagRole.lane_marker and abs(self.position[2]) > 0.05:
            raise GeometryError("lane_marker tags sit on the road surface (z ~ 0)")

    @property
    def epc_hex(self) -> str:
        # deterministic EPC derived from the tag id
        return hashlib.sha256(self.tag_id.encode()).hexdigest()[: self.epc_bits // 4].upper()


@dataclass(frozen=True)
class LateralProfile:
    """Lateral position of the vehicle centre versus distance travelled.

    y(s) = offset + amplitude * sin(2*pi*s/wavelength + phase)
    """

    offset: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 20.0
    phase: float = 0.0

    def __post_init__(self):
        if self.wavelength <= 0:
            raise GeometryError("wavelength must be > 0")

    def y(self, s):
        return self.offset + self.amplitude * np.sin(2 * np.pi * s / self.wavelength + self.phase)

    def slope(self, s):
        k = 2 * np.pi / self.wavelength
        return self.amplitude * k * np.cos(k * s + self.phase)


@dataclass(frozen=True)
class RoadScenario:
    id: ScenarioId = ScenarioId.S1
    lane_width_W: float = 3.6
    lateral_standoff_l: float = 3.0
    curvature: float = 0.0
    tag_placements: tuple[TagPlacement, ...] = ()
    # (t_start, speed) pairs, speeds in m/s
    speed_profile: tuple[tuple[float, float], ...] = ((0.0, 15 * MPH),)
    max_turn_angle_alpha_max: float = 0.0
    start_s: float = -40.0
    length_m: float = 80.0
    lateral_profile: LateralProfile = field(default_factory=LateralProfile)

    def __post_init__(self):
        if self.lane_width_W <= 0:
            raise GeometryError("lane_width_W must be > 0")
        if self.curvature < 0:
            raise GeometryError("curvature must be >= 0")
        if self.id.value.startswith("S") and self.lateral_standoff_l <= 0:
            raise GeometryError("lateral_standoff_l must be > 0 for sign scenarios")
        if not self.speed_profile or self.speed_profile[0][0] != 0.0:
            raise GeometryError("speed_profile must start at t=0")
        ts = [seg[0] for seg in self.speed_profile]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise GeometryError("speed_profile times must increase")
        if any(seg[1] < 0 for seg in self.speed_profile):
            raise GeometryError("speeds must be >= 0")
        if self.curvature > 0 and self.lateral_profile.amplitude != 0:
            raise GeometryError("lateral weaving is only supported on straight roads")
        if self.length_m <= 0:
            raise GeometryError("length_m must be > 0")

    @property
    def speed(self) -> float:
        """Initial speed."""
        return self.speed_profile[0][1]

    def distance(self, t: float) -> float:
        """Distance travelled by time t (piecewise-constant speed)."""
        s = 0.0
        prof = self.speed_profile
        for i, (t0, v) in enumerate(prof):
            t1 = prof[i + 1][0] if i + 1 < len(prof) else math.inf
            if t <= t0:
                break
            s += v * (min(t, t1) - t0)
        return s

    def distance_array(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.zeros_like(t)
        prof = self.speed_profile
        for i, (t0, v) in enumerate(prof):
            t1 = prof[i + 1][0] if i + 1 < len(prof) else np.inf
            s += v * np.clip(np.minimum(t, t1) - t0, 0.0, None)
        return s

    def time_to_travel(self, dist: float) -> float:
        """Inverse of ``distance``; inf if the vehicle stops short."""
        s = 0.0
        prof = self.speed_profile
        for i, (t0, v) in enumerate(prof):
            t1 = prof[i + 1][0] if i + 1 < len(prof) else math.inf
            seg = v * (t1 - t0)
            if s + seg >= dist:
                return t0 + (dist - s) / v if v > 0 else math.inf
            s += seg
        return math.inf

    def horizon(self) -> float:
        """Time needed to drive ``length_m``."""
        return self.time_to_travel(self.length_m)


def pose_at_arclength(scenario: RoadScenario, s: float) -> Pose2D:
    if scenario.curvature == 0.0:
        lp = scenario.lateral_profile
        if lp.amplitude == 0.0:
            return Pose2D(s, lp.offset, 0.0)
        k = 2.0 * math.pi / lp.wavelength
        y = lp.offset + lp.amplitude * math.sin(k * s + lp.phase)
        return Pose2D(s, y, math.atan(lp.amplitude * k * math.cos(k * s + lp.phase)))
    r = 1.0 / scenario.curvature
    phi = s / r
    return Pose2D(r * math.sin(phi), -r * (1.0 - math.cos(phi)), -phi)


def vehicle_pose(scenario: RoadScenario, t: float) -> Pose2D:
    return pose_at_arclength(scenario, scenario.start_s + scenario.distance(t))


def _poses_array(scenario: RoadScenario, t: np.ndarray):
    s = scenario.start_s + scenario.distance_array(t)
    if scenario.curvature == 0.0:
        lp = scenario.lateral_profile
        return s, lp.y(s) + 0 * s, np.arctan(lp.slope(s)) + 0 * s
    r = 1.0 / scenario.curvature
    phi = s / r
    return r * np.sin(phi), -r * (1.0 - np.cos(phi)), -phi


def antenna_position(pose: Pose2D, mount: AntennaMount) -> tuple[float, float, float]:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    lo = mount.lateral_offset
    return (pose.x - s * lo, pose.y + c * lo, mount.height)


def antenna_tag_geometry(pose: Pose2D, mount: AntennaMount, tag: TagPlacement):
    """Return (range, off_boresight_angle, in_beam) for one tag."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    ax, ay, az = antenna_position(pose, mount)
    dx = tag.position[0] - ax
    dy = tag.position[1] - ay
    dz = tag.position[2] - az
    rng = math.sqrt(dx * dx + dy * dy + dz * dz)
    bx, by, bz = mount.boresight_vehicle_frame()
    wx, wy = c * bx - s * by, s * bx + c * by
    if mount.facing is Facing.side_horizontal:
        h = math.hypot(dx, dy)
        if h == 0.0:
            return rng, math.pi, False
        cosang = (wx * dx + wy * dy) / (math.hypot(wx, wy) * h)
    else:
        if rng == 0.0:
            return rng, 0.0, True
        cosang = (wx * dx + wy * dy + bz * dz) / rng
    ang = math.acos(max(-1.0, min(1.0, cosang)))
    return rng, ang, ang <= mount.beamwidth_alpha / 2


def off_boresight_array(scenario: RoadScenario, mount: AntennaMount, tag: TagPlacement, t: np.ndarray):
    """Vectorised off-boresight angle of a tag over sample times."""
    x, y, hd = _poses_array(scenario, t)
    c, s = np.cos(hd), np.sin(hd)
    lo = mount.lateral_offset
    ax, ay = x - s * lo, y + c * lo
    dx = tag.position[0] - ax
    dy = tag.position[1] - ay
    dz = tag.position[2] - mount.height
    bx, by, bz = mount.boresight_vehicle_frame()
    wx, wy = c * bx - s * by, s * bx + c * by
    if mount.facing is Facing.side_horizontal:
        h = np.hypot(dx, dy)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = (wx * dx + wy * dy) / (np.hypot(wx, wy) * h)
        cosang = np.where(h == 0, -1.0, cosang)
    else:
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = (wx * dx + wy * dy + bz * dz) / r
        cosang = np.where(r == 0, 1.0, cosang)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def _check_half_angle(a: float):
    if not 0.0 <= a < math.pi / 2:
        raise GeometryError("tangent argument outside [0, pi/2)")


def coverage_length_boresight(l: float, alpha: float) -> float:
    """Longitudinal coverage of a beam aimed perpendicular to the road."""
    if l <= 0:
        raise GeometryError("l must be > 0")
    _check_half_angle(alpha / 2)
    return 2.0 * l * math.tan(alpha / 2)


def coverage_length_tilted(l: float, alpha: float, theta: float) -> float:
    """Longitudinal coverage of a beam tilted forward by ``theta``.

    The beam edges sit at theta - alpha/2 and theta + alpha/2 from the
    perpendicular; their intercepts with the roadside line bound the
    coverage.
    """
    if l <= 0:
        raise GeometryError("l must be > 0")
    if alpha < 0 or theta < 0:
        raise GeometryError("alpha and theta must be >= 0")
    if theta + alpha / 2 >= math.pi / 2:
        raise GeometryError("theta + alpha/2 must stay below pi/2")
    return l * math.tan(theta + alpha / 2) - l * math.tan(theta - alpha / 2)


def path_loss_delta(l: float, theta: float) -> float:
    """Extra round-trip path loss (dB) when the range grows from l to l/cos(theta)."""
    if l <= 0:
        raise GeometryError("l must be > 0")
    _check_half_angle(theta)
    return 40.0 * math.log10(l / math.cos(theta)) - 40.0 * math.log10(l)


def _in_beam(scenario, mount, tag, t) -> bool:
    return antenna_tag_geometry(vehicle_pose(scenario, t), mount, tag)[2]


def _bisect(scenario, mount, tag, lo, hi, tol):
    # lo and hi have different in-beam states
    state_lo = _in_beam(scenario, mount, tag, lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _in_beam(scenario, mount, tag, mid) == state_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dwell_windows(
    scenario: RoadScenario,
    mount: AntennaMount,
    tag: TagPlacement,
    t_max: float | None = None,
    step: float = 1e-3,
    tol: float = 1e-12,
) -> list[tuple[float, float]]:
    """All (t_enter, t_exit) intervals where the tag is inside the beam."""
    if t_max is None:
        t_max = scenario.horizon()
    n = int(math.ceil(t_max / step)) + 1
    t = np.linspace(0.0, t_max, n)
    inside = off_boresight_array(scenario, mount, tag, t) <= mount.beamwidth_alpha / 2
    if not inside.any():
        return []
    edges = np.flatnonzero(np.diff(inside.astype(np.int8)))
    windows = []
    t_enter = 0.0 if inside[0] else None
    for k in edges:
        tb = _bisect(scenario, mount, tag, t[k], t[k + 1], tol)
        if inside[k + 1]:
            t_enter = tb
        else:
            windows.append((t_enter, tb))
            t_enter = None
    if t_enter is not None:
        windows.append((t_enter, t_max))
    return windows


def dwell_window(scenario, mount, tag, t_max=None, step=1e-3, tol=1e-12) -> tuple[float, float]:
    """First interval during which ``tag`` lies inside the beam."""
    w = dwell_windows(scenario, mount, tag, t_max, step, tol)
    if not w:
        raise NeverInBeam(f"tag {tag.tag_id} never enters the beam")
    return w[0]
