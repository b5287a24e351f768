"""2-D world: A* global planning, unicycle integration, receding-horizon episodes."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .band import (
    KinodynamicLimits,
    Pose2,
    TimedBand,
    Twist,
    finite_diff_twist,
    init_from_path,
    resize,
    wrap_angle,
)
from .baselines import (
    DWAConfig,
    HingeFactor,
    SoftTEBConfig,
    dwa_step,
    soft_teb_solve,
    wrap_soft,
)
from .factors import (
    DriveDirectionFactor,
    Factor,
    FactorKind,
    StartTwistFactor,
    acceleration_factor,
    goal_factor,
    kinematics_factor,
    obstacle_factor,
    time_factor,
    velocity_factor,
)
from .grid import OccupancyGrid
from .nlls import LMConfig
from .vsloop import OuterTrace, VSConfig, outer_solve

PLANNER_NAMES = ("dwa", "teb", "teb-vs")


class NoPathError(RuntimeError):
    """The global planner found no route between start and goal."""


@dataclass(frozen=True)
class RobotState:
    pose: Pose2
    twist: Twist
    time: float


@dataclass
class PlannerParams:
    """Band construction and solver knobs shared by the local planners."""

    dt_ref: float = 0.3
    dt_hysteresis: float = 0.1
    max_poses: int = 40
    v_nominal: float | None = None  # defaults to 0.8 * v_max
    lookahead: float = 2.0
    # Light time pressure: strong weights keep the fixed-penalty outer loop
    # chasing the contracting band instead of settling within its budget.
    time_weight: float = 0.1
    goal_weight: float = 50.0
    v_back: float = 0.02  # tolerated reverse speed, m/s
    direction_weight: float = 50.0
    continuity_weight: float = 20.0
    rho0: float = 10.0
    mu0: float = 10.0
    max_outer: int = 30
    max_outer_replan: int = 3
    inner_iterations_replan: int = 10
    split_velocity_only: bool = False
    soft: SoftTEBConfig = field(default_factory=SoftTEBConfig)
    dwa: DWAConfig = field(default_factory=DWAConfig)

    def nominal_speed(self, limits: KinodynamicLimits) -> float:
        return self.v_nominal if self.v_nominal is not None else 0.8 * limits.v_max


@dataclass(eq=False)
class Scenario:
    grid: OccupancyGrid
    start: Pose2
    goal: Pose2
    limits: KinodynamicLimits
    control_period: float = 0.2
    timeout: float = 90.0
    goal_tol_pos: float = 0.1
    goal_tol_head: float = 0.2

    def __post_init__(self):
        if self.control_period <= 0:
            raise ValueError("control period must be positive")
        for name, pose in (("start", self.start), ("goal", self.goal)):
            if self.grid.clearance(pose.x, pose.y) < self.limits.d_min:
                raise ValueError(
                    f"{name} pose ({pose.x}, {pose.y}) has clearance below d_min"
                )


def inflated_blocked(grid: OccupancyGrid, d_min: float) -> np.ndarray:
    """Cells unusable once the clearance requirement is applied."""
    return grid.occupied | (grid.distance_field < d_min)


_DIAG = math.sqrt(2.0)
_MOVES = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, _DIAG), (1, -1, _DIAG), (-1, 1, _DIAG), (-1, -1, _DIAG),
)


def astar(
    grid: OccupancyGrid,
    start_cell: tuple[int, int],
    goal_cell: tuple[int, int],
    d_min: float = 0.0,
) -> list[tuple[int, int]]:
    """8-connected shortest path: unit axial steps, sqrt(2) diagonals.

    Diagonal motion requires both adjacent axial cells free (no corner
    cutting). Cells are blocked when occupied or closer than d_min to an
    obstacle. Returns [] when the goal is unreachable.
    """
    blocked = inflated_blocked(grid, d_min)
    sx, sy = start_cell
    gx, gy = goal_cell
    for name, (cx, cy) in (("start", start_cell), ("goal", goal_cell)):
        if not grid.in_bounds(cx, cy):
            raise ValueError(f"{name} cell {cx, cy} outside the grid")
        if blocked[cy, cx]:
            raise ValueError(f"{name} cell {cx, cy} blocked after inflation")
    if start_cell == goal_cell:
        return [start_cell]

    def heuristic(ix: int, iy: int) -> float:
        return math.hypot(ix - gx, iy - gy)

    g_score = {start_cell: 0.0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    open_heap = [(heuristic(sx, sy), counter, start_cell)]
    closed: set[tuple[int, int]] = set()
    while open_heap:
        _, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        if cell == goal_cell:
            path = [cell]
            while cell in came:
                cell = came[cell]
                path.append(cell)
            return path[::-1]
        closed.add(cell)
        cx, cy = cell
        for dx, dy, cost in _MOVES:
            nx, ny = cx + dx, cy + dy
            if not grid.in_bounds(nx, ny) or blocked[ny, nx]:
                continue
            if dx != 0 and dy != 0 and (blocked[cy, nx] or blocked[ny, cx]):
                continue
            tentative = g_score[cell] + cost
            nb = (nx, ny)
            if tentative < g_score.get(nb, math.inf) - 1e-12:
                g_score[nb] = tentative
                came[nb] = cell
                counter += 1
                heapq.heappush(open_heap, (tentative + heuristic(nx, ny), counter, nb))
    return []


def path_cost(path: list[tuple[int, int]]) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        total += _DIAG if (x0 != x1 and y0 != y1) else 1.0
    return total


def integrate(state: RobotState, cmd: Twist, dt: float) -> RobotState:
    """Exact constant-twist arc for one step of duration dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, beta = state.pose.x, state.pose.y, state.pose.beta
    if abs(cmd.omega) < 1e-9:
        x += cmd.v * dt * math.cos(beta)
        y += cmd.v * dt * math.sin(beta)
        nb = beta
    else:
        nb = beta + cmd.omega * dt
        x += (cmd.v / cmd.omega) * (math.sin(nb) - math.sin(beta))
        y -= (cmd.v / cmd.omega) * (math.cos(nb) - math.cos(beta))
    return RobotState(Pose2(x, y, wrap_angle(nb)), cmd, state.time + dt)


@dataclass
class TickRecord:
    t: float
    x: float
    y: float
    beta: float
    v_cmd: float
    omega_cmd: float
    v_real: float
    omega_real: float
    plan_s: float


TRACE_CSV_HEADER = "t,x,y,beta,v_cmd,omega_cmd,v_real,omega_real,plan_ms"


@dataclass
class RunTrace:
    records: list[TickRecord] = field(default_factory=list)
    success: bool = False
    collision: bool = False
    timed_out: bool = False
    no_path: bool = False
    outer_traces: list[OuterTrace] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return not self.success

    def plan_times(self) -> list[float]:
        return [r.plan_s for r in self.records]

    def to_csv(self, no_timing: bool = False) -> str:
        lines = [TRACE_CSV_HEADER]
        for r in self.records:
            plan_ms = 0.0 if no_timing else r.plan_s * 1e3
            vals = (r.t, r.x, r.y, r.beta, r.v_cmd, r.omega_cmd,
                    r.v_real, r.omega_real, plan_ms)
            lines.append(",".join(f"{v:.9g}" for v in vals))
        return "\n".join(lines) + "\n"


def build_factors(
    band: TimedBand,
    grid: OccupancyGrid,
    limits: KinodynamicLimits,
    params: PlannerParams,
    goal: Pose2,
    start_twist: Twist | None = None,
    receding: bool = False,
) -> list[Factor]:
    """Standard registration: time + goal objectives, kinematics equalities,
    velocity/acceleration/obstacle inequalities.

    With `receding` the registration adds hinge objectives for forward-drive
    preference and (when a current twist is given) start continuity. They are
    replanning plumbing that keeps consecutive solutions from flip-flopping
    between forward and reversing maneuvers; as objectives they leave the
    constrained problem the canonical class set.
    """
    n = band.num_poses
    factors: list[Factor] = []
    for i in range(n):
        factors.append(time_factor(i, params.time_weight))
    factors.append(goal_factor(n, goal, params.goal_weight))
    if receding:
        for i in range(n):
            factors.append(HingeFactor(DriveDirectionFactor(i, params.v_back),
                                       params.direction_weight, 0.0))
        if start_twist is not None:
            factors.append(HingeFactor(
                StartTwistFactor(start_twist.v, start_twist.omega, limits),
                params.continuity_weight, 0.0,
            ))
    for i in range(n):
        factors.append(kinematics_factor(i))
    for i in range(n):
        factors.append(velocity_factor(i, limits))
    for i in range(n - 1):
        factors.append(acceleration_factor(i, limits))
    for i in range(1, n + 1):
        factors.append(obstacle_factor(i, grid, limits.d_min))
    return factors


def split_restricted(factors: list[Factor], params: PlannerParams) -> list[Factor]:
    """Optionally keep only velocity inequalities split; hinge-wrap the rest."""
    if not params.split_velocity_only:
        return factors
    out: list[Factor] = []
    for f in factors:
        if f.kind == FactorKind.INEQUALITY and type(f).__name__ != "VelocityFactor":
            out.extend(wrap_soft([f], params.soft))
        else:
            out.append(f)
    return out


def global_path(scenario: Scenario) -> list[tuple[float, float]]:
    """A* route as world waypoints with exact start/goal endpoints."""
    grid = scenario.grid
    start_cell = grid.world_to_cell(scenario.start.x, scenario.start.y)
    goal_cell = grid.world_to_cell(scenario.goal.x, scenario.goal.y)
    cells = astar(grid, start_cell, goal_cell, scenario.limits.d_min)
    if not cells:
        raise NoPathError("A* found no route between start and goal")
    pts = [grid.cell_center(ix, iy) for ix, iy in cells]
    pts[0] = (scenario.start.x, scenario.start.y)
    pts[-1] = (scenario.goal.x, scenario.goal.y)
    return pts


def seed_band(
    pts: list[tuple[float, float]],
    start_heading: float,
    goal_heading: float,
    params: PlannerParams,
    limits: KinodynamicLimits,
    rotation_rate: float = 0.8,
) -> TimedBand:
    """Path-following band with an in-place rotation prelude when the start
    heading disagrees with the first path tangent.

    Without the prelude the first segment's angular rate starts far beyond
    omega_max and the solver must restructure the whole band head.
    """
    band = init_from_path(pts, start_heading, goal_heading, params.dt_ref,
                          params.nominal_speed(limits))
    tangent = math.atan2(pts[1][1] - pts[0][1], pts[1][0] - pts[0][0])
    dbeta = wrap_angle(tangent - start_heading)
    omega_nom = rotation_rate * limits.omega_max
    n_steps = math.ceil(abs(dbeta) / (omega_nom * params.dt_ref))
    if n_steps < 1:
        return band
    # In-place rotation poses ending exactly at the tangent, so the first
    # translating segment starts kinematically consistent.
    poses = list(band.poses)
    dts = list(band.dts)
    dt_rot = abs(dbeta) / n_steps / omega_nom
    sx, sy = pts[0]
    for k in range(n_steps, 0, -1):
        poses.insert(0, Pose2(sx, sy, start_heading + (k / n_steps) * dbeta))
        dts.insert(0, dt_rot)
    return TimedBand(band.start, tuple(poses), tuple(dts))


def plan_once(
    scenario: Scenario,
    params: PlannerParams | None = None,
    config: VSConfig | None = None,
):
    """One-shot band optimization over the whole A* route.

    Returns (band, state, outer trace, factor registration). The default
    configuration keeps the standard penalties and lets the inner solver run
    to convergence, which the outer loop's monitoring presumes.
    """
    params = params or PlannerParams()
    pts = global_path(scenario)
    band0 = seed_band(pts, scenario.start.beta, scenario.goal.beta, params,
                      scenario.limits)
    factors = build_factors(band0, scenario.grid, scenario.limits, params,
                            scenario.goal)
    if config is None:
        config = VSConfig(
            rho0=params.rho0, mu0=params.mu0, max_outer=params.max_outer,
            lm=LMConfig(max_iterations=300),
        )
    band, state, trace = outer_solve(
        band0, split_restricted(factors, params), scenario.limits, config
    )
    return band, state, trace, factors


class _Polyline:
    def __init__(self, pts: list[tuple[float, float]]):
        self.pts = pts
        self.cum = [0.0]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            self.cum.append(self.cum[-1] + math.hypot(x1 - x0, y1 - y0))
        self.length = self.cum[-1]

    def project(self, x: float, y: float) -> float:
        """Arc length of the closest point on the polyline."""
        best_d2 = math.inf
        best_s = 0.0
        for k, ((x0, y0), (x1, y1)) in enumerate(zip(self.pts, self.pts[1:])):
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            t = 0.0 if seg2 < 1e-18 else min(max(((x - x0) * dx + (y - y0) * dy) / seg2, 0.0), 1.0)
            px, py = x0 + t * dx, y0 + t * dy
            d2 = (x - px) ** 2 + (y - py) ** 2
            if d2 < best_d2 - 1e-15:
                best_d2 = d2
                best_s = self.cum[k] + t * math.sqrt(seg2)
        return best_s

    def point_at(self, s: float) -> tuple[float, float, float]:
        """Point and tangent heading at arc length s."""
        s = min(max(s, 0.0), self.length)
        k = 0
        while k < len(self.cum) - 2 and self.cum[k + 1] < s:
            k += 1
        x0, y0 = self.pts[k]
        x1, y1 = self.pts[k + 1]
        seg = self.cum[k + 1] - self.cum[k]
        t = 0.0 if seg < 1e-18 else (s - self.cum[k]) / seg
        return x0 + t * (x1 - x0), y0 + t * (y1 - y0), math.atan2(y1 - y0, x1 - x0)

    def window(self, s0: float, s1: float) -> list[tuple[float, float]]:
        """Waypoints of the sub-polyline between arc lengths s0 and s1."""
        x0, y0, _ = self.point_at(s0)
        pts = [(x0, y0)]
        for k, (cx, cy) in enumerate(self.pts):
            if s0 < self.cum[k] < s1:
                pts.append((cx, cy))
        x1, y1, _ = self.point_at(s1)
        pts.append((x1, y1))
        return pts


class _BandPlanner:
    """Receding-horizon band planner; `soft` selects the penalty baseline."""

    def __init__(self, scenario: Scenario, params: PlannerParams, soft: bool):
        self.scenario = scenario
        self.params = params
        self.soft = soft
        self.path = _Polyline(global_path(scenario))
        self.band: TimedBand | None = None
        self.local_goal: Pose2 | None = None
        self.goal_s = 0.0

    def _local_goal(self, s_robot: float) -> tuple[Pose2, float]:
        s_target = min(s_robot + self.params.lookahead, self.path.length)
        if self.path.length - s_target < 1e-9:
            return self.scenario.goal, self.path.length
        x, y, tangent = self.path.point_at(s_target)
        return Pose2(x, y, tangent), s_target

    def _seed_band(self, pose: Pose2, s_robot: float, goal: Pose2, s_goal: float) -> TimedBand:
        pts = self.path.window(s_robot, s_goal)
        pts[0] = (pose.x, pose.y)
        if len(pts) < 2 or math.hypot(pts[-1][0] - pts[0][0], pts[-1][1] - pts[0][1]) < 1e-9:
            pts = [(pose.x, pose.y), (goal.x, goal.y)]
        v_nom = self.params.nominal_speed(self.scenario.limits)
        return init_from_path(pts, pose.beta, goal.beta, self.params.dt_ref, v_nom)

    def _advance_band(self, pose: Pose2, goal: Pose2, s_goal: float) -> TimedBand:
        band = self.band
        poses = list(band.poses)
        dts = list(band.dts)
        v_nom = self.params.nominal_speed(self.scenario.limits)
        spacing = v_nom * self.params.dt_ref

        # Drop leading poses the robot has achieved in position AND heading;
        # in-place rotation poses are consumed one heading step at a time.
        # Near the goal the band may shrink to the goal pose alone, so it
        # never points backward at an overrun waypoint.
        while len(poses) > 1:
            p0, p1 = poses[0], poses[1]
            along = (p0.x - pose.x) * (p1.x - p0.x) + (p0.y - pose.y) * (p1.y - p0.y)
            near = pose.distance_to(p0) < 0.75 * spacing
            heading_ok = abs(wrap_angle(p0.beta - pose.beta)) < 0.35
            if (near and heading_ok) or (not near and along < 0.0):
                poses.pop(0)
                dts.pop(0)
            else:
                break
        omega_nom = 0.8 * self.scenario.limits.omega_max
        dts[0] = max(
            pose.distance_to(poses[0]) / v_nom,
            abs(wrap_angle(poses[0].beta - pose.beta)) / omega_nom,
            self.params.dt_ref * 0.25,
        )

        # Extend along the global path if the lookahead target moved.
        if s_goal > self.goal_s + 1e-9:
            tail = self.path.window(self.goal_s, s_goal)
            prev = poses[-1]
            for x, y in tail[1:]:
                step = math.hypot(x - prev.x, y - prev.y)
                if step < 1e-9:
                    continue
                heading = math.atan2(y - prev.y, x - prev.x)
                poses.append(Pose2(x, y, heading))
                dts.append(max(step / v_nom, self.params.dt_ref * 0.25))
                prev = poses[-1]
        poses[-1] = goal
        band = TimedBand(pose, tuple(poses), tuple(dts))
        return resize(band, self.params.dt_ref, self.params.dt_hysteresis,
                      self.params.max_poses)

    def step(self, state: RobotState) -> Twist:
        pose = state.pose
        s_robot = self.path.project(pose.x, pose.y)
        goal, s_goal = self._local_goal(s_robot)
        if self.band is None:
            band = self._seed_band(pose, s_robot, goal, s_goal)
        else:
            band = self._advance_band(pose, goal, s_goal)
        self.local_goal = goal
        self.goal_s = s_goal

        factors = build_factors(band, self.scenario.grid, self.scenario.limits,
                                self.params, goal, start_twist=state.twist,
                                receding=True)
        if self.soft:
            cfg = SoftTEBConfig(
                velocity_weight=self.params.soft.velocity_weight,
                acceleration_weight=self.params.soft.acceleration_weight,
                obstacle_weight=self.params.soft.obstacle_weight,
                kinematics_weight=self.params.soft.kinematics_weight,
                hinge_margin=self.params.soft.hinge_margin,
                lm=LMConfig(max_iterations=self.params.inner_iterations_replan
                            * self.params.max_outer_replan),
            )
            solved = soft_teb_solve(band, factors, cfg)
        else:
            cfg = VSConfig(
                rho0=self.params.rho0, mu0=self.params.mu0,
                max_outer=self.params.max_outer_replan,
                eps_primal=2e-3, eps_dual=5e-2,
                lm=LMConfig(max_iterations=self.params.inner_iterations_replan),
            )
            solved, _, trace = outer_solve(
                band, split_restricted(factors, self.params),
                self.scenario.limits, cfg,
            )
            self.last_outer_trace = trace
        self.band = solved
        return self._command(pose, solved)

    def _command(self, pose: Pose2, band: TimedBand) -> Twist:
        """Time-weighted band twist over one control period, with a
        goal-approach deceleration envelope.

        Linear velocity uses the heading projection of each displacement
        (equal to the signed speed on kinematically consistent segments, and
        free of the sign blowup on transiently sideways ones).
        """
        period = self.scenario.control_period
        t_acc = v_acc = w_acc = 0.0
        for i in range(band.num_segments):
            p_from = band.pose_at(i)
            p_to = band.pose_at(i + 1)
            dt = band.dts[i]
            proj = ((p_to.x - p_from.x) * math.cos(p_from.beta)
                    + (p_to.y - p_from.y) * math.sin(p_from.beta))
            take = min(dt, period - t_acc)
            v_acc += (proj / dt) * take
            w_acc += (wrap_angle(p_to.beta - p_from.beta) / dt) * take
            t_acc += take
            if t_acc >= period - 1e-12:
                break
        if t_acc <= 0.0:
            cmd = finite_diff_twist(band, 0)
        else:
            cmd = Twist(v_acc / t_acc, w_acc / t_acc)
        limits = self.scenario.limits
        # Deceleration envelope into the goal avoids overshoot/reverse cycles.
        dist_goal = pose.distance_to(self.scenario.goal)
        v_cap = math.sqrt(2.0 * limits.a_max * max(dist_goal, 0.0))
        v = min(max(cmd.v, -v_cap), v_cap)
        return Twist(v, cmd.omega)


class _DWAPlanner:
    """Window sampler guided by a carrot on the global path.

    Scoring straight at the final goal walls the robot into local minima, so
    the wrapper hands `dwa_step` a lookahead point instead; once the position
    tolerance is met it rotates in place onto the goal heading.
    """

    def __init__(self, scenario: Scenario, params: PlannerParams):
        self.scenario = scenario
        self.config = params.dwa
        self.carrot_dist = max(params.lookahead * 0.5,
                               self.config.horizon * scenario.limits.v_max)
        self.path = _Polyline(global_path(scenario))

    def step(self, state: RobotState) -> Twist:
        pose = state.pose
        goal = self.scenario.goal
        if pose.distance_to(goal) <= self.scenario.goal_tol_pos:
            err = wrap_angle(goal.beta - pose.beta)
            omega = min(max(2.0 * err, -self.scenario.limits.omega_max),
                        self.scenario.limits.omega_max)
            return Twist(0.0, omega)
        s_robot = self.path.project(pose.x, pose.y)
        s_target = min(s_robot + self.carrot_dist, self.path.length)
        if self.path.length - s_target < 1e-9:
            carrot = goal
        else:
            x, y, tangent = self.path.point_at(s_target)
            carrot = Pose2(x, y, tangent)
        return dwa_step(pose, state.twist, carrot, self.scenario.grid,
                        self.config, self.scenario.limits)


def make_planner(name: str, scenario: Scenario, params: PlannerParams):
    if name == "dwa":
        return _DWAPlanner(scenario, params)
    if name == "teb":
        return _BandPlanner(scenario, params, soft=True)
    if name in ("teb-vs", "teb_vs"):
        return _BandPlanner(scenario, params, soft=False)
    raise ValueError(f"unknown planner {name!r}; expected one of {PLANNER_NAMES}")


def clip_twist(cmd: Twist, limits: KinodynamicLimits) -> Twist:
    return Twist(
        min(max(cmd.v, -limits.v_max), limits.v_max),
        min(max(cmd.omega, -limits.omega_max), limits.omega_max),
    )


def _reached(state: RobotState, scenario: Scenario) -> bool:
    return (
        state.pose.distance_to(scenario.goal) <= scenario.goal_tol_pos
        and abs(wrap_angle(state.pose.beta - scenario.goal.beta)) <= scenario.goal_tol_head
    )


N_COLLISION_SUBSTEPS = 5


def run_episode(
    scenario: Scenario, planner: str, params: PlannerParams | None = None
) -> RunTrace:
    """Receding-horizon episode at the scenario's control period.

    One trace record per executed control tick (post-integration state and the
    clipped command, which the kinematic robot realizes exactly). Failure
    modes come back as flags, never exceptions.
    """
    params = params or PlannerParams()
    trace = RunTrace()
    try:
        plan = make_planner(planner, scenario, params)
    except NoPathError:
        trace.no_path = True
        return trace
    except ValueError as exc:
        if "blocked" in str(exc) or "outside the grid" in str(exc):
            trace.no_path = True
            return trace
        raise

    state = RobotState(scenario.start, Twist(0.0, 0.0), 0.0)

    def observation_record() -> TickRecord:
        return TickRecord(state.time, state.pose.x, state.pose.y, state.pose.beta,
                          0.0, 0.0, 0.0, 0.0, 0.0)

    while True:
        if _reached(state, scenario):
            trace.success = True
            if not trace.records:
                trace.records.append(observation_record())
            break
        if state.time >= scenario.timeout - 1e-12:
            trace.timed_out = True
            if not trace.records:
                trace.records.append(observation_record())
            break

        t0 = time.perf_counter()
        cmd = plan.step(state)
        plan_s = time.perf_counter() - t0
        cmd = clip_twist(cmd, scenario.limits)
        if getattr(plan, "last_outer_trace", None) is not None:
            trace.outer_traces.append(plan.last_outer_trace)
            plan.last_outer_trace = None

        collided = False
        nxt = state
        for _ in range(N_COLLISION_SUBSTEPS):
            nxt = integrate(nxt, cmd, scenario.control_period / N_COLLISION_SUBSTEPS)
            if scenario.grid.is_occupied_world(nxt.pose.x, nxt.pose.y):
                collided = True
                break
        state = RobotState(nxt.pose, cmd, state.time + scenario.control_period)
        trace.records.append(TickRecord(
            state.time, state.pose.x, state.pose.y, state.pose.beta,
            cmd.v, cmd.omega, cmd.v, cmd.omega, plan_s,
        ))
        if collided:
            trace.collision = True
            break
    return trace
