"""Residual blocks over band variables and stacked constraint assembly.

Variable blocks use an interleaved layout: step k (free pose k+1 and segment
duration k) owns pose block ``2k`` (coordinates 4k..4k+2) and dt block
``2k + 1`` (coordinate 4k + 3), giving N = 4I coordinates for I free poses.
The fixed start pose owns no block. Jacobians are analytic; at nonsmooth
points (|.| at zero, distance-field cell edges) they return a subgradient
selection with sign(0) = +1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .band import KinodynamicLimits, Pose2, TimedBand, angle_midpoint, wrap_angle
from .grid import OccupancyGrid


class FactorKind(enum.Enum):
    OBJECTIVE = "objective"
    EQUALITY = "equality"
    INEQUALITY = "inequality"


def pose_block(pose_index: int) -> int:
    """Block index of band pose ``pose_index`` (must be a free pose, >= 1)."""
    if pose_index < 1:
        raise ValueError("the start pose is fixed and owns no variable block")
    return 2 * (pose_index - 1)


def dt_block(segment: int) -> int:
    return 2 * segment + 1


def block_coords(block: int) -> tuple[int, ...]:
    k, rem = divmod(block, 2)
    if rem == 0:
        return (4 * k, 4 * k + 1, 4 * k + 2)
    return (4 * k + 3,)


def touched_coords(factor: "Factor") -> tuple[int, ...]:
    coords: list[int] = []
    for b in factor.var_indices:
        coords.extend(block_coords(b))
    return tuple(coords)


def _sgn(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


@dataclass(frozen=True, eq=False)
class Factor:
    """Base residual block; concrete factors implement residual/jacobian."""

    kind: FactorKind = field(init=False)
    var_indices: tuple[int, ...] = field(init=False)
    dim: int = field(init=False)
    weight: float = field(init=False)

    def residual(self, band: TimedBand) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, band: TimedBand) -> np.ndarray:
        """Dense block row, shape (dim, number of touched coordinates)."""
        raise NotImplementedError

    def _set(self, kind: FactorKind, var_indices: tuple[int, ...], dim: int,
             weight: float = 1.0) -> None:
        if dim < 1:
            raise ValueError("factor dimension must be >= 1")
        if not var_indices or any(a >= b for a, b in zip(var_indices, var_indices[1:])):
            raise ValueError("var_indices must be nonempty and strictly increasing")
        if weight < 0:
            raise ValueError("factor weight must be nonnegative")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "var_indices", var_indices)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "weight", weight)


@dataclass(frozen=True, eq=False)
class TimeFactor(Factor):
    """Objective r = sqrt(weight) * dt_i, so the squared cost is weight * dt_i^2."""

    i: int
    w: float = 1.0

    def __post_init__(self):
        self._set(FactorKind.OBJECTIVE, (dt_block(self.i),), 1, self.w)

    def residual(self, band: TimedBand) -> np.ndarray:
        return np.array([math.sqrt(self.w) * band.dts[self.i]])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        return np.array([[math.sqrt(self.w)]])


@dataclass(frozen=True, eq=False)
class GoalFactor(Factor):
    """Objective anchoring one pose to a target (weighted position + heading).

    The band has no intrinsic pull toward its terminal state, so planners pin
    the last pose with this block.
    """

    pose_index: int
    target: Pose2
    w: float = 50.0

    def __post_init__(self):
        self._set(FactorKind.OBJECTIVE, (pose_block(self.pose_index),), 3, self.w)

    def residual(self, band: TimedBand) -> np.ndarray:
        p = band.pose_at(self.pose_index)
        sw = math.sqrt(self.w)
        return np.array([
            sw * (p.x - self.target.x),
            sw * (p.y - self.target.y),
            sw * wrap_angle(p.beta - self.target.beta),
        ])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        return math.sqrt(self.w) * np.eye(3)


@dataclass(frozen=True, eq=False)
class KinematicsFactor(Factor):
    """Nonholonomic equality: the chord must align with the mean heading.

    r = cos(beta_mid) * dy - sin(beta_mid) * dx, zero exactly on
    constant-curvature arcs.
    """

    i: int

    def __post_init__(self):
        if self.i == 0:
            blocks = (pose_block(1),)
        else:
            blocks = (pose_block(self.i), pose_block(self.i + 1))
        self._set(FactorKind.EQUALITY, blocks, 1)

    def _parts(self, band: TimedBand):
        p_from = band.pose_at(self.i)
        p_to = band.pose_at(self.i + 1)
        beta_mid = angle_midpoint(p_from.beta, p_to.beta)
        dx = p_to.x - p_from.x
        dy = p_to.y - p_from.y
        return beta_mid, dx, dy

    def residual(self, band: TimedBand) -> np.ndarray:
        beta_mid, dx, dy = self._parts(band)
        return np.array([math.cos(beta_mid) * dy - math.sin(beta_mid) * dx])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        beta_mid, dx, dy = self._parts(band)
        c, s = math.cos(beta_mid), math.sin(beta_mid)
        dr_dmid = -s * dy - c * dx
        to_cols = [-s, c, 0.5 * dr_dmid]
        if self.i == 0:
            return np.array([to_cols])
        return np.array([[s, -c, 0.5 * dr_dmid] + to_cols])


def _segment_geometry(band: TimedBand, i: int):
    """Displacement, distance, unit direction, sign and wrapped heading change."""
    p_from = band.pose_at(i)
    p_to = band.pose_at(i + 1)
    dx = p_to.x - p_from.x
    dy = p_to.y - p_from.y
    dist = math.hypot(dx, dy)
    if dist > 1e-12:
        ux, uy = dx / dist, dy / dist
    else:
        ux = uy = 0.0  # subgradient selection at the cusp
    sign = _sgn(dx * math.cos(p_from.beta) + dy * math.sin(p_from.beta))
    dbeta = wrap_angle(p_to.beta - p_from.beta)
    return dist, ux, uy, sign, dbeta


@dataclass(frozen=True, eq=False)
class VelocityFactor(Factor):
    """Inequality (|v_i| - v_max, |omega_i| - omega_max) on segment i."""

    i: int
    limits: KinodynamicLimits

    def __post_init__(self):
        if self.i == 0:
            blocks = (pose_block(1), dt_block(0))
        else:
            blocks = (pose_block(self.i), pose_block(self.i + 1), dt_block(self.i))
        self._set(FactorKind.INEQUALITY, blocks, 2)

    def residual(self, band: TimedBand) -> np.ndarray:
        dist, _, _, _, dbeta = _segment_geometry(band, self.i)
        dt = band.dts[self.i]
        return np.array([
            dist / dt - self.limits.v_max,
            abs(dbeta) / dt - self.limits.omega_max,
        ])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        dist, ux, uy, _, dbeta = _segment_geometry(band, self.i)
        dt = band.dts[self.i]
        sw = _sgn(dbeta)
        from_cols = np.array([[-ux / dt, -uy / dt, 0.0], [0.0, 0.0, -sw / dt]])
        to_cols = np.array([[ux / dt, uy / dt, 0.0], [0.0, 0.0, sw / dt]])
        dt_col = np.array([[-dist / dt**2], [-abs(dbeta) / dt**2]])
        if self.i == 0:
            return np.hstack([to_cols, dt_col])
        return np.hstack([from_cols, to_cols, dt_col])


def _fd_accel(band: TimedBand, i: int) -> tuple[float, float]:
    dt1, dt2 = band.dts[i], band.dts[i + 1]
    d1, _, _, s1, db1 = _segment_geometry(band, i)
    d2, _, _, s2, db2 = _segment_geometry(band, i + 1)
    m = 0.5 * (dt1 + dt2)
    return (s2 * d2 / dt2 - s1 * d1 / dt1) / m, (db2 / dt2 - db1 / dt1) / m


@dataclass(frozen=True, eq=False)
class AccelerationFactor(Factor):
    """Inequality (|a_i| - a_max, |alpha_i| - alpha_max) across segments i, i+1.

    The linear component uses unsigned speeds |v| = dist/dt. The signed model
    is discontinuous where a displacement turns perpendicular to its heading,
    and the outer loop's iterates deadlock exactly on that jump surface; with
    speeds the residual is continuous and agrees with the signed value on
    every trajectory that does not reverse through a stop.
    """

    i: int
    limits: KinodynamicLimits

    def __post_init__(self):
        i = self.i
        if i == 0:
            blocks = (pose_block(1), dt_block(0), pose_block(2), dt_block(1))
        else:
            blocks = (
                pose_block(i),
                pose_block(i + 1),
                dt_block(i),
                pose_block(i + 2),
                dt_block(i + 1),
            )
        self._set(FactorKind.INEQUALITY, blocks, 2)

    def residual(self, band: TimedBand) -> np.ndarray:
        i = self.i
        dt1, dt2 = band.dts[i], band.dts[i + 1]
        d1, _, _, _, db1 = _segment_geometry(band, i)
        d2, _, _, _, db2 = _segment_geometry(band, i + 1)
        m = 0.5 * (dt1 + dt2)
        a = (d2 / dt2 - d1 / dt1) / m
        alpha = (db2 / dt2 - db1 / dt1) / m
        return np.array([
            abs(a) - self.limits.a_max,
            abs(alpha) - self.limits.alpha_max,
        ])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        i = self.i
        dt1, dt2 = band.dts[i], band.dts[i + 1]
        d1, u1x, u1y, _, db1 = _segment_geometry(band, i)
        d2, u2x, u2y, _, db2 = _segment_geometry(band, i + 1)
        v1, v2 = d1 / dt1, d2 / dt2
        w1, w2 = db1 / dt1, db2 / dt2
        m = 0.5 * (dt1 + dt2)
        a = (v2 - v1) / m
        alpha = (w2 - w1) / m
        sa, sl = _sgn(a), _sgn(alpha)

        p_from = np.array([
            [sa * u1x / (dt1 * m), sa * u1y / (dt1 * m), 0.0],
            [0.0, 0.0, sl / (dt1 * m)],
        ])
        p_mid = np.array([
            [
                sa * (-u2x / dt2 - u1x / dt1) / m,
                sa * (-u2y / dt2 - u1y / dt1) / m,
                0.0,
            ],
            [0.0, 0.0, sl * (-1.0 / dt2 - 1.0 / dt1) / m],
        ])
        p_to = np.array([
            [sa * u2x / (dt2 * m), sa * u2y / (dt2 * m), 0.0],
            [0.0, 0.0, sl / (dt2 * m)],
        ])
        dt1_col = np.array([
            [sa * (v1 / dt1 - 0.5 * a) / m],
            [sl * (w1 / dt1 - 0.5 * alpha) / m],
        ])
        dt2_col = np.array([
            [sa * (-v2 / dt2 - 0.5 * a) / m],
            [sl * (-w2 / dt2 - 0.5 * alpha) / m],
        ])
        if i == 0:
            return np.hstack([p_mid, dt1_col, p_to, dt2_col])
        return np.hstack([p_from, p_mid, dt1_col, p_to, dt2_col])


@dataclass(frozen=True, eq=False)
class DriveDirectionFactor(Factor):
    """Inequality -proj/dt <= v_back: bounds backward motion.

    Uses the displacement's heading projection directly (smooth everywhere),
    so the planner cannot settle into reversing-arc basins that the signed
    velocity model makes attractive.
    """

    i: int
    v_back: float = 0.02

    def __post_init__(self):
        if self.i == 0:
            blocks = (pose_block(1), dt_block(0))
        else:
            blocks = (pose_block(self.i), pose_block(self.i + 1), dt_block(self.i))
        self._set(FactorKind.INEQUALITY, blocks, 1)

    def residual(self, band: TimedBand) -> np.ndarray:
        p_from = band.pose_at(self.i)
        p_to = band.pose_at(self.i + 1)
        dt = band.dts[self.i]
        proj = ((p_to.x - p_from.x) * math.cos(p_from.beta)
                + (p_to.y - p_from.y) * math.sin(p_from.beta))
        return np.array([-proj / dt - self.v_back])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        p_from = band.pose_at(self.i)
        p_to = band.pose_at(self.i + 1)
        dt = band.dts[self.i]
        c, s = math.cos(p_from.beta), math.sin(p_from.beta)
        dx = p_to.x - p_from.x
        dy = p_to.y - p_from.y
        proj = dx * c + dy * s
        to_cols = [-c / dt, -s / dt]
        dbeta_col = -(-dx * s + dy * c) / dt
        dt_col = proj / dt**2
        if self.i == 0:
            return np.array([to_cols + [0.0, dt_col]])
        return np.array([[c / dt, s / dt, dbeta_col] + to_cols + [0.0, dt_col]])


@dataclass(frozen=True, eq=False)
class StartTwistFactor(Factor):
    """Inequality bounding acceleration from the current robot twist into
    segment 0, so receding-horizon replans keep velocity continuity.

    Uses speeds (|v|) on the linear channel; rows are
    (|a| - a_max, |alpha| - alpha_max) with a = (dist0/dt0 - |v_now|)/dt0 and
    alpha = (dbeta0/dt0 - omega_now)/dt0.
    """

    v_now: float
    omega_now: float
    limits: KinodynamicLimits

    def __post_init__(self):
        self._set(FactorKind.INEQUALITY, (pose_block(1), dt_block(0)), 2)

    def _parts(self, band: TimedBand):
        dist, ux, uy, _, dbeta = _segment_geometry(band, 0)
        dt = band.dts[0]
        a = (dist / dt - abs(self.v_now)) / dt
        alpha = (dbeta / dt - self.omega_now) / dt
        return dist, ux, uy, dbeta, dt, a, alpha

    def residual(self, band: TimedBand) -> np.ndarray:
        _, _, _, _, _, a, alpha = self._parts(band)
        return np.array([
            abs(a) - self.limits.a_max,
            abs(alpha) - self.limits.alpha_max,
        ])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        dist, ux, uy, dbeta, dt, a, alpha = self._parts(band)
        sa, sl = _sgn(a), _sgn(alpha)
        return np.array([
            [sa * ux / dt**2, sa * uy / dt**2, 0.0,
             sa * (-2.0 * dist / dt**3 + abs(self.v_now) / dt**2)],
            [0.0, 0.0, sl / dt**2,
             sl * (-2.0 * dbeta / dt**3 + self.omega_now / dt**2)],
        ])


@dataclass(frozen=True, eq=False)
class ObstacleFactor(Factor):
    """Inequality d_min - clearance(pose); out-of-map poses count as clearance 0."""

    pose_index: int
    grid: OccupancyGrid
    d_min: float

    def __post_init__(self):
        self._set(FactorKind.INEQUALITY, (pose_block(self.pose_index),), 1)

    def residual(self, band: TimedBand) -> np.ndarray:
        p = band.pose_at(self.pose_index)
        return np.array([self.d_min - self.grid.clearance(p.x, p.y)])

    def jacobian(self, band: TimedBand) -> np.ndarray:
        p = band.pose_at(self.pose_index)
        gx, gy = self.grid.clearance_gradient(p.x, p.y)
        return np.array([[-gx, -gy, 0.0]])


def time_factor(i: int, weight: float) -> TimeFactor:
    return TimeFactor(i, weight)


def kinematics_factor(i: int) -> KinematicsFactor:
    return KinematicsFactor(i)


def velocity_factor(i: int, limits: KinodynamicLimits) -> VelocityFactor:
    return VelocityFactor(i, limits)


def acceleration_factor(i: int, limits: KinodynamicLimits) -> AccelerationFactor:
    return AccelerationFactor(i, limits)


def obstacle_factor(pose_index: int, grid: OccupancyGrid, d_min: float) -> ObstacleFactor:
    return ObstacleFactor(pose_index, grid, d_min)


def goal_factor(pose_index: int, target: Pose2, weight: float) -> GoalFactor:
    return GoalFactor(pose_index, target, weight)


def evaluate(factor: Factor, band: TimedBand) -> np.ndarray:
    """Residual vector of a factor on a band."""
    r = factor.residual(band)
    if r.shape != (factor.dim,):
        raise ValueError(f"residual dimension mismatch: {r.shape} vs {factor.dim}")
    return r


def jacobian(factor: Factor, band: TimedBand) -> np.ndarray:
    """Dense Jacobian block row of a factor on a band."""
    J = factor.jacobian(band)
    n_touched = len(touched_coords(factor))
    if J.shape != (factor.dim, n_touched):
        raise ValueError(
            f"jacobian shape mismatch: {J.shape} vs ({factor.dim}, {n_touched})"
        )
    return J


@dataclass(eq=False)
class StackedConstraints:
    """Equality/inequality residuals with sparse Jacobians over all N = 4I coords."""

    c: np.ndarray
    p: np.ndarray
    Jc: sp.csr_matrix
    Jp: sp.csr_matrix


class _TripletBuilder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.nrows = 0

    def add_block(self, cols: tuple[int, ...], J: np.ndarray) -> None:
        for r in range(J.shape[0]):
            row = self.nrows + r
            for j, col in enumerate(cols):
                self.rows.append(row)
                self.cols.append(col)
                self.vals.append(J[r, j])
        self.nrows += J.shape[0]

    def to_csr(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.nrows, n)
        )


def stack_constraints(factors: list[Factor], band: TimedBand) -> StackedConstraints:
    """Assemble c, p, Jc, Jp in registration order."""
    n = 4 * band.num_poses
    c_parts: list[np.ndarray] = []
    p_parts: list[np.ndarray] = []
    jc = _TripletBuilder()
    jp = _TripletBuilder()
    for f in factors:
        if f.kind == FactorKind.OBJECTIVE:
            continue
        r = f.residual(band)
        J = f.jacobian(band)
        cols = touched_coords(f)
        if f.kind == FactorKind.EQUALITY:
            jc.add_block(cols, J)
            c_parts.append(r)
        else:
            jp.add_block(cols, J)
            p_parts.append(r)
    c = np.concatenate(c_parts) if c_parts else np.zeros(0)
    p = np.concatenate(p_parts) if p_parts else np.zeros(0)
    return StackedConstraints(c=c, p=p, Jc=jc.to_csr(n), Jp=jp.to_csr(n))


def constraint_rows(factors: list[Factor], band: TimedBand) -> tuple[np.ndarray, np.ndarray]:
    """Residuals only (c, p), skipping Jacobian work."""
    c_parts = [f.residual(band) for f in factors if f.kind == FactorKind.EQUALITY]
    p_parts = [f.residual(band) for f in factors if f.kind == FactorKind.INEQUALITY]
    c = np.concatenate(c_parts) if c_parts else np.zeros(0)
    p = np.concatenate(p_parts) if p_parts else np.zeros(0)
    return c, p
