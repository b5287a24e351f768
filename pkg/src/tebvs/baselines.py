"""Baseline planners: soft-penalty band optimization and the dynamic window approach.

The soft baseline consumes the exact same factor objects as the
variable-splitting solver; inequalities are wrapped in squared hinges and
equalities in weighted squares, then everything goes through one
Levenberg-Marquardt solve. Keeping the residual library shared means the two
methods differ only in how constraints are enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .band import KinodynamicLimits, Pose2, TimedBand, Twist, wrap_angle
from .factors import Factor, FactorKind
from .grid import OccupancyGrid
from .nlls import LMConfig, SubproblemSpec, Variables, lm_solve


@dataclass
class SoftTEBConfig:
    velocity_weight: float = 50.0
    acceleration_weight: float = 30.0
    obstacle_weight: float = 50.0
    kinematics_weight: float = 1000.0
    hinge_margin: float = 0.05
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if min(self.velocity_weight, self.acceleration_weight,
               self.obstacle_weight, self.kinematics_weight) < 0:
            raise ValueError("hinge weights must be nonnegative")


@dataclass(frozen=True, eq=False)
class HingeFactor(Factor):
    """Objective wrapper sqrt(w) * max(0, p + margin) around an inequality factor."""

    inner: Factor
    w: float
    margin: float

    def __post_init__(self):
        if self.inner.kind != FactorKind.INEQUALITY:
            raise ValueError("hinge wraps inequality factors only")
        self._set(FactorKind.OBJECTIVE, self.inner.var_indices, self.inner.dim, self.w)

    def residual(self, band: TimedBand) -> np.ndarray:
        p = self.inner.residual(band)
        return math.sqrt(self.w) * np.maximum(0.0, p + self.margin)

    def jacobian(self, band: TimedBand) -> np.ndarray:
        p = self.inner.residual(band)
        J = self.inner.jacobian(band)
        active = (p + self.margin >= 0).astype(float)  # sign(0) = +1 selection
        return math.sqrt(self.w) * active[:, None] * J


@dataclass(frozen=True, eq=False)
class SquaredEqualityFactor(Factor):
    """Objective wrapper sqrt(w) * c around an equality factor."""

    inner: Factor
    w: float

    def __post_init__(self):
        if self.inner.kind != FactorKind.EQUALITY:
            raise ValueError("squared wrapper expects an equality factor")
        self._set(FactorKind.OBJECTIVE, self.inner.var_indices, self.inner.dim, self.w)

    def residual(self, band: TimedBand) -> np.ndarray:
        return math.sqrt(self.w) * self.inner.residual(band)

    def jacobian(self, band: TimedBand) -> np.ndarray:
        return math.sqrt(self.w) * self.inner.jacobian(band)


def _hinge_weight(factor: Factor, config: SoftTEBConfig) -> float:
    name = type(factor).__name__
    if name == "VelocityFactor":
        return config.velocity_weight
    if name == "AccelerationFactor":
        return config.acceleration_weight
    if name == "ObstacleFactor":
        return config.obstacle_weight
    return config.obstacle_weight


def wrap_soft(factors: list[Factor], config: SoftTEBConfig) -> list[Factor]:
    """Objective-only view of a factor registration for the soft baseline."""
    wrapped: list[Factor] = []
    for f in factors:
        if f.kind == FactorKind.OBJECTIVE:
            wrapped.append(f)
        elif f.kind == FactorKind.EQUALITY:
            wrapped.append(SquaredEqualityFactor(f, config.kinematics_weight))
        else:
            wrapped.append(HingeFactor(f, _hinge_weight(f, config), config.hinge_margin))
    return wrapped


def soft_teb_solve(
    band0: TimedBand,
    factors: list[Factor],
    config: SoftTEBConfig | None = None,
    vars0: Variables | None = None,
) -> TimedBand:
    """One unconstrained LM solve with all constraints as soft penalties."""
    config = config or SoftTEBConfig()
    objective = wrap_soft(factors, config)
    spec = SubproblemSpec(
        objective, [], np.zeros(0), np.zeros(0), np.zeros(0), 1.0, 1.0
    )
    cur = vars0 if vars0 is not None else Variables.from_band(band0)
    result, _ = lm_solve(spec, cur, config.lm)
    return result.to_band()


@dataclass
class DWAConfig:
    n_v: int = 11
    n_omega: int = 21
    horizon: float = 1.5
    heading_weight: float = 0.8
    clearance_weight: float = 0.2
    velocity_weight: float = 0.2
    period: float = 0.2
    clearance_saturation: float = 1.0
    n_substeps: int = 15

    def __post_init__(self):
        if self.n_v < 2 or self.n_omega < 2:
            raise ValueError("need at least 2 samples per velocity axis")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def _arc_endpoint(x: float, y: float, beta: float, v: float, omega: float, dt: float):
    if abs(omega) < 1e-9:
        return x + v * dt * math.cos(beta), y + v * dt * math.sin(beta), beta
    nb = beta + omega * dt
    return (
        x + (v / omega) * (math.sin(nb) - math.sin(beta)),
        y - (v / omega) * (math.cos(nb) - math.cos(beta)),
        nb,
    )


def dwa_step(
    pose: Pose2,
    twist: Twist,
    goal: Pose2,
    grid: OccupancyGrid,
    config: DWAConfig,
    limits: KinodynamicLimits,
) -> Twist:
    """Best admissible constant twist by exhaustive window scoring.

    The window is the current twist plus/minus one control period of
    acceleration, clipped to the limits. Arcs that dip below d_min clearance
    are discarded; ties break toward smaller |omega|, then sample order.
    If everything collides, rotate in place toward the freer side.
    """
    v_lo = max(-limits.v_max, twist.v - limits.a_max * config.period)
    v_hi = min(limits.v_max, twist.v + limits.a_max * config.period)
    w_lo = max(-limits.omega_max, twist.omega - limits.alpha_max * config.period)
    w_hi = min(limits.omega_max, twist.omega + limits.alpha_max * config.period)
    v_samples = np.linspace(v_lo, v_hi, config.n_v)
    w_samples = np.linspace(w_lo, w_hi, config.n_omega)

    best: Twist | None = None
    best_score = -math.inf
    best_abs_omega = math.inf
    dt_sub = config.horizon / config.n_substeps
    for v in v_samples:
        for w in w_samples:
            x, y, b = pose.x, pose.y, pose.beta
            min_clear = math.inf
            for _ in range(config.n_substeps):
                x, y, b = _arc_endpoint(x, y, b, v, w, dt_sub)
                min_clear = min(min_clear, grid.clearance(x, y))
            if min_clear < limits.d_min:
                continue
            to_goal = math.atan2(goal.y - y, goal.x - x)
            heading = 1.0 - abs(wrap_angle(to_goal - b)) / math.pi
            clear = min(min_clear, config.clearance_saturation) / config.clearance_saturation
            vel = v / limits.v_max
            score = (
                config.heading_weight * heading
                + config.clearance_weight * clear
                + config.velocity_weight * vel
            )
            if score > best_score or (score == best_score and abs(w) < best_abs_omega):
                best_score = score
                best = Twist(float(v), float(w))
                best_abs_omega = abs(w)
    if best is not None:
        return best

    # Recovery: stop and rotate toward whichever side has more room.
    off = max(2 * limits.d_min, 2 * grid.resolution)
    left = grid.clearance(
        pose.x - off * math.sin(pose.beta), pose.y + off * math.cos(pose.beta)
    )
    right = grid.clearance(
        pose.x + off * math.sin(pose.beta), pose.y - off * math.cos(pose.beta)
    )
    return Twist(0.0, limits.omega_max if left >= right else -limits.omega_max)
