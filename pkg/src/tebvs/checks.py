"""Seeded self-check suites behind the `check` command.

Each suite re-derives expected values from an independent oracle (finite
differences, grid search, uniform-cost search, recorded solver traces) and
reports one PASS/FAIL line. Identical seeds give identical output.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .band import KinodynamicLimits, Pose2, TimedBand
from .factors import (
    FactorKind,
    acceleration_factor,
    goal_factor,
    kinematics_factor,
    obstacle_factor,
    time_factor,
    touched_coords,
    velocity_factor,
)
from .grid import OccupancyGrid
from .nlls import Variables
from .vsloop import VSConfig, monotonicity_check, outer_solve, slack_update


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _random_band(rng, n=8) -> TimedBand:
    x, y = rng.uniform(-1, 1, size=2)
    heading = rng.uniform(-2.0, 2.0)
    poses = []
    dts = []
    px, py, pb = x, y, heading
    for _ in range(n):
        pb = pb + rng.uniform(-0.6, 0.6)
        px += rng.uniform(0.08, 0.3) * math.cos(pb + rng.uniform(-0.3, 0.3))
        py += rng.uniform(0.08, 0.3) * math.sin(pb + rng.uniform(-0.3, 0.3))
        poses.append(Pose2(px, py, pb))
        dts.append(rng.uniform(0.15, 0.6))
    return TimedBand(Pose2(x, y, heading), tuple(poses), tuple(dts))


def near_nonsmooth(factor, band: TimedBand) -> bool:
    """True when a factor sits within ~1e-3 of one of its residual kinks."""
    name = type(factor).__name__
    segs = ()
    if name == "VelocityFactor":
        segs = (factor.i,)
    elif name == "AccelerationFactor":
        segs = (factor.i, factor.i + 1)
    elif name == "KinematicsFactor":
        p_from, p_to = band.pose_at(factor.i), band.pose_at(factor.i + 1)
        return abs(abs(math.remainder(p_to.beta - p_from.beta, 2 * math.pi)) - math.pi) < 1e-3
    for i in segs:
        p_from, p_to = band.pose_at(i), band.pose_at(i + 1)
        dx, dy = p_to.x - p_from.x, p_to.y - p_from.y
        if math.hypot(dx, dy) < 1e-3:
            return True
        dbeta = math.remainder(p_to.beta - p_from.beta, 2 * math.pi)
        if abs(dbeta) < 1e-4 or abs(abs(dbeta) - math.pi) < 1e-3:
            return True
    if name == "AccelerationFactor":
        from .factors import _fd_accel

        a, alpha = _fd_accel(band, factor.i)
        if abs(a) < 1e-4 or abs(alpha) < 1e-4:
            return True
    if name == "ObstacleFactor":
        p = band.pose_at(factor.pose_index)
        g = factor.grid
        fx = (p.x - g.origin_x) / g.resolution - 0.5
        fy = (p.y - g.origin_y) / g.resolution - 0.5
        if min(fx % 1.0, 1.0 - fx % 1.0) < 1e-3 or min(fy % 1.0, 1.0 - fy % 1.0) < 1e-3:
            return True
        if not (1.0 < fx < g.width - 2.0 and 1.0 < fy < g.height - 2.0):
            return True
    for p in (band.start, *band.poses):
        if abs(abs(p.beta) - math.pi) < 1e-4:
            return True
    return False


def check_jacobians(seed: int, n_bands: int = 40) -> CheckResult:
    """Analytic factor Jacobians against central finite differences."""
    rng = np.random.default_rng(seed)
    limits = KinodynamicLimits(0.5, 1.5, 0.5, 2.0, 0.25)
    grid = OccupancyGrid(rng.random((48, 48)) < 0.05, 0.1)
    worst = 0.0
    checked = 0
    h = 1e-6
    for _ in range(n_bands):
        band = _random_band(rng, n=6)
        factors = [time_factor(0, 1.2), goal_factor(6, Pose2(0.5, 0.5, 0.2), 10.0)]
        factors += [kinematics_factor(i) for i in range(6)]
        factors += [velocity_factor(i, limits) for i in range(6)]
        factors += [acceleration_factor(i, limits) for i in range(5)]
        factors += [obstacle_factor(i, grid, 0.3) for i in range(1, 7)]
        base = Variables.from_band(band)
        for f in factors:
            if near_nonsmooth(f, band):
                continue
            cols = list(touched_coords(f))
            J = f.jacobian(band)
            fd = np.zeros_like(J)
            for j, col in enumerate(cols):
                vp, vm = base.values.copy(), base.values.copy()
                vp[col] += h
                vm[col] -= h
                rp = f.residual(Variables(band.start, vp).to_band())
                rm = f.residual(Variables(band.start, vm).to_band())
                fd[:, j] = (rp - rm) / (2 * h)
            err = np.abs(J - fd).max() / max(1.0, np.abs(fd).max())
            worst = max(worst, err)
            checked += 1
    passed = worst < 1e-5 and checked > 200
    return CheckResult("jacobian_fd", passed,
                       f"max rel err {worst:.2e} over {checked} factor evals")


def check_slack_prox(seed: int, n: int = 1000) -> CheckResult:
    """Closed-form slack update against a 1-D grid-search prox oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = rng.uniform(-3, 3)
        eta = rng.uniform(-3, 3)
        rho = rng.uniform(0.2, 10.0)
        v = slack_update(np.array([p]), np.array([eta]), rho)[0]
        hi = max(1.0, -p - eta / rho) + 1.0
        grid_v = np.arange(0.0, hi, 1e-4)
        vals = eta * (p + grid_v) + 0.5 * rho * (p + grid_v) ** 2
        v_oracle = float(grid_v[np.argmin(vals)])
        worst = max(worst, abs(v - v_oracle))
    passed = worst <= 1e-3
    return CheckResult("slack_prox", passed, f"max |v - oracle| {worst:.2e} over {n}")


def _dijkstra(blocked: np.ndarray, start, goal) -> float:
    h, w = blocked.shape
    moves = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)),
             (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]
    dist = {start: 0.0}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in seen:
            continue
        if cell == goal:
            return d
        seen.add(cell)
        x, y = cell
        for dx, dy, c in moves:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h) or blocked[ny, nx]:
                continue
            if dx != 0 and dy != 0 and (blocked[y, nx] or blocked[ny, x]):
                continue
            nd = d + c
            if nd < dist.get((nx, ny), math.inf) - 1e-12:
                dist[(nx, ny)] = nd
                heapq.heappush(heap, (nd, (nx, ny)))
    return math.inf


def check_astar(seed: int, n_grids: int = 60) -> CheckResult:
    """A* path cost against uniform-cost search on random grids."""
    from .sim import astar, inflated_blocked, path_cost

    rng = np.random.default_rng(seed)
    worst = 0.0
    tested = 0
    while tested < n_grids:
        occ = rng.random((32, 32)) < 0.2
        grid = OccupancyGrid(occ, 0.1)
        blocked = inflated_blocked(grid, 0.0)
        free = np.argwhere(~blocked)
        if len(free) < 2:
            continue
        a = tuple(free[rng.integers(len(free))][::-1])
        b = tuple(free[rng.integers(len(free))][::-1])
        oracle = _dijkstra(blocked, a, b)
        path = astar(grid, a, b)
        cost = path_cost(path) if path else math.inf
        if math.isinf(oracle) or math.isinf(cost):
            if oracle != cost:
                return CheckResult("astar_dijkstra", False,
                                   f"reachability mismatch at seed case {tested}")
        else:
            worst = max(worst, abs(cost - oracle))
        tested += 1
    passed = worst < 1e-9
    return CheckResult("astar_dijkstra", passed,
                       f"max |cost diff| {worst:.2e} over {n_grids} grids")


def _coord_factor(kind: FactorKind, target: float):
    """Single-coordinate linear factor r = x0 - target, for canned problems."""
    from dataclasses import dataclass as dc

    from .factors import Factor

    @dc(frozen=True, eq=False)
    class _CoordFactor(Factor):
        t: float
        which: FactorKind

        def __post_init__(self):
            self._set(self.which, (0,), 1)

        def residual(self, band: TimedBand) -> np.ndarray:
            return np.array([band.poses[0].x - self.t])

        def jacobian(self, band: TimedBand) -> np.ndarray:
            return np.array([[1.0, 0.0, 0.0]])

    return _CoordFactor(target, kind)


def check_canned_monotonicity(seed: int) -> CheckResult:
    del seed  # deterministic problems
    cfg = VSConfig(eps_primal=1e-6, eps_dual=1e-6, max_outer=60)
    band_i = TimedBand(Pose2(0, 0, 0), (Pose2(2.0, 0, 0),), (0.5,))
    obj_i = _coord_factor(FactorKind.OBJECTIVE, 2.0)
    con_i = _coord_factor(FactorKind.INEQUALITY, 1.0)
    _, state_i, trace_i = outer_solve(band_i, [obj_i, con_i], None, cfg)
    rep_i = monotonicity_check(trace_i, 1e-8)

    band_e = TimedBand(Pose2(0, 0, 0), (Pose2(0.0, 0, 0),), (0.5,))
    obj_e = _coord_factor(FactorKind.OBJECTIVE, 0.0)
    con_e = _coord_factor(FactorKind.EQUALITY, 1.0)
    _, state_e, trace_e = outer_solve(band_e, [obj_e, con_e], None, cfg)
    rep_e = monotonicity_check(trace_e, 1e-8)

    kkt_ok = (abs(state_i.eta[0] - 2.0) < 1e-3 and abs(state_e.zeta[0] + 2.0) < 1e-3)
    passed = rep_i.passed and rep_e.passed and kkt_ok
    return CheckResult(
        "canned_monotonicity", passed,
        f"inequality viol {rep_i.max_violation:.1e}, equality viol "
        f"{rep_e.max_violation:.1e}, eta {state_i.eta[0]:.4f}, zeta {state_e.zeta[0]:.4f}",
    )


def run_checks(seed: int) -> tuple[bool, list[str]]:
    results = [
        check_jacobians(seed),
        check_slack_prox(seed + 1),
        check_astar(seed + 2),
        check_canned_monotonicity(seed + 3),
    ]
    lines = [r.line() for r in results]
    return all(r.passed for r in results), lines
