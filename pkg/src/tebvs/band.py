"""Timed elastic band: domain types, finite-difference kinematics, band setup."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

# Lower bound on every time interval; keeps 1/dt terms in residuals finite.
DT_FLOOR = 1e-3


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = theta - TWO_PI * round(theta / TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def angle_midpoint(a: float, b: float) -> float:
    """Midpoint heading between a and b, taken along the shorter arc."""
    return wrap_angle(a + 0.5 * wrap_angle(b - a))


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y in meters, heading beta in radians, stored wrapped)."""

    x: float
    y: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose position must be finite, got ({self.x}, {self.y})")
        object.__setattr__(self, "beta", wrap_angle(self.beta))

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class Twist:
    """Signed velocity command: v in m/s, omega in rad/s."""

    v: float
    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError(f"twist must be finite, got ({self.v}, {self.omega})")


@dataclass(frozen=True)
class KinodynamicLimits:
    """Velocity/acceleration bounds and minimum obstacle clearance."""

    v_max: float
    omega_max: float
    a_max: float
    alpha_max: float
    d_min: float

    def __post_init__(self):
        for name in ("v_max", "omega_max", "a_max", "alpha_max", "d_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class TimedBand:
    """Trajectory as a fixed start pose, I free poses and I positive durations.

    Segment i runs from pose_at(i) to pose_at(i + 1) over dts[i], where
    pose_at(0) is the fixed start.
    """

    start: Pose2
    poses: tuple[Pose2, ...]
    dts: tuple[float, ...]

    def __post_init__(self):
        if len(self.poses) != len(self.dts):
            raise ValueError(
                f"poses/dts length mismatch: {len(self.poses)} vs {len(self.dts)}"
            )
        if len(self.poses) < 1:
            raise ValueError("band needs at least one free pose")
        if any(dt <= 0 or not math.isfinite(dt) for dt in self.dts):
            raise ValueError("all time intervals must be strictly positive and finite")
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "dts", tuple(float(dt) for dt in self.dts))

    @property
    def num_poses(self) -> int:
        return len(self.poses)

    @property
    def num_segments(self) -> int:
        return len(self.dts)

    @property
    def total_time(self) -> float:
        return sum(self.dts)

    def pose_at(self, i: int) -> Pose2:
        """Pose i in band indexing: 0 is the fixed start, 1..I are free poses."""
        if i < 0 or i > len(self.poses):
            raise IndexError(f"pose index {i} out of range [0, {len(self.poses)}]")
        return self.start if i == 0 else self.poses[i - 1]


def finite_diff_twist(band: TimedBand, i: int) -> Twist:
    """Velocity over segment i.

    v carries the sign of the displacement projected on the segment's
    starting heading, so reverse motion comes out negative.
    """
    if i < 0 or i >= band.num_segments:
        raise IndexError(f"segment index {i} out of range [0, {band.num_segments})")
    dt = band.dts[i]
    p_from = band.pose_at(i)
    p_to = band.pose_at(i + 1)
    dx = p_to.x - p_from.x
    dy = p_to.y - p_from.y
    dist = math.hypot(dx, dy)
    sign = 1.0 if dx * math.cos(p_from.beta) + dy * math.sin(p_from.beta) >= 0 else -1.0
    v = sign * dist / dt
    omega = wrap_angle(p_to.beta - p_from.beta) / dt
    return Twist(v, omega)


def finite_diff_accel(band: TimedBand, i: int) -> tuple[float, float]:
    """Acceleration between segments i and i+1, centered on their mean duration."""
    if i < 0 or i >= band.num_segments - 1:
        raise IndexError(
            f"acceleration index {i} out of range [0, {band.num_segments - 1})"
        )
    t1 = finite_diff_twist(band, i)
    t2 = finite_diff_twist(band, i + 1)
    mean_dt = 0.5 * (band.dts[i] + band.dts[i + 1])
    return (t2.v - t1.v) / mean_dt, (t2.omega - t1.omega) / mean_dt


def _dedupe(path: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = [path[0]]
    for p in path[1:]:
        if math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) > 1e-12:
            out.append(p)
    return out


def _point_and_tangent(
    pts: list[tuple[float, float]], cumlen: list[float], s: float
) -> tuple[float, float, float]:
    """Point and tangent heading at arc length s along a polyline."""
    s = min(max(s, 0.0), cumlen[-1])
    # Last segment handles s == total length.
    k = 0
    while k < len(cumlen) - 2 and cumlen[k + 1] < s:
        k += 1
    seg = cumlen[k + 1] - cumlen[k]
    t = (s - cumlen[k]) / seg
    x0, y0 = pts[k]
    x1, y1 = pts[k + 1]
    heading = math.atan2(y1 - y0, x1 - x0)
    return x0 + t * (x1 - x0), y0 + t * (y1 - y0), heading


def init_from_path(
    path: list[tuple[float, float]],
    start_heading: float,
    goal_heading: float,
    dt_ref: float,
    v_nominal: float,
) -> TimedBand:
    """Seed a band along a piecewise-linear path.

    Poses are spaced uniformly in arc length at most v_nominal * dt_ref apart;
    interior headings follow segment tangents (angle-midpoint at corners), the
    endpoints take start_heading / goal_heading. All durations start at dt_ref.
    """
    if dt_ref <= 0 or v_nominal <= 0:
        raise ValueError("dt_ref and v_nominal must be positive")
    if len(path) < 2:
        raise ValueError("path needs at least 2 points")
    pts = _dedupe([(float(x), float(y)) for x, y in path])
    if len(pts) < 2:
        raise ValueError("path is degenerate (fewer than 2 distinct points)")

    cumlen = [0.0]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        cumlen.append(cumlen[-1] + math.hypot(x1 - x0, y1 - y0))
    total = cumlen[-1]

    spacing_ref = v_nominal * dt_ref
    n_seg = max(1, math.ceil(total / spacing_ref - 1e-12))
    spacing = total / n_seg

    samples = [(pts[0][0], pts[0][1])]
    for k in range(1, n_seg + 1):
        x, y, _ = _point_and_tangent(pts, cumlen, k * spacing)
        samples.append((x, y))

    poses = []
    for k in range(1, n_seg + 1):
        x, y = samples[k]
        if k == n_seg:
            heading = goal_heading
        else:
            # Central chord: equals the tangent on straight runs, smooths corners.
            heading = math.atan2(
                samples[k + 1][1] - samples[k - 1][1],
                samples[k + 1][0] - samples[k - 1][0],
            )
        poses.append(Pose2(x, y, heading))
    start = Pose2(pts[0][0], pts[0][1], start_heading)
    return TimedBand(start, tuple(poses), tuple([dt_ref] * n_seg))


def resize(
    band: TimedBand, dt_ref: float, dt_hysteresis: float, max_poses: int
) -> TimedBand:
    """Re-balance temporal resolution toward dt_ref.

    Segments longer than dt_ref + dt_hysteresis are bisected (at most once per
    call each), segments shorter than dt_ref - dt_hysteresis drop their end
    pose into the following segment. Total time is preserved and the start
    pose is untouched.
    """
    if dt_hysteresis >= dt_ref:
        raise ValueError("dt_hysteresis must be smaller than dt_ref")
    poses = list(band.poses)
    dts = list(band.dts)

    new_poses: list[Pose2] = []
    new_dts: list[float] = []
    count = len(poses)
    i = 0
    prev_pose = band.start
    while i < len(poses):
        pose = poses[i]
        dt = dts[i]
        is_last = i == len(poses) - 1
        if dt > dt_ref + dt_hysteresis and count < max_poses:
            mid = Pose2(
                0.5 * (prev_pose.x + pose.x),
                0.5 * (prev_pose.y + pose.y),
                angle_midpoint(prev_pose.beta, pose.beta),
            )
            new_poses.extend([mid, pose])
            new_dts.extend([0.5 * dt, 0.5 * dt])
            count += 1
        elif dt < dt_ref - dt_hysteresis and count > 2 and not is_last:
            # Drop this segment's end pose; its time flows into the next segment.
            dts[i + 1] += dt
            count -= 1
            i += 1
            continue
        else:
            new_poses.append(pose)
            new_dts.append(dt)
        prev_pose = pose
        i += 1
    return TimedBand(band.start, tuple(new_poses), tuple(new_dts))
