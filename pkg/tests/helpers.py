"""Shared builders for the test suite: synthetic factors, random bands, grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tebvs.band import KinodynamicLimits, Pose2, TimedBand
from tebvs.factors import Factor, FactorKind, touched_coords
from tebvs.grid import OccupancyGrid
from tebvs.nlls import Variables

LIMITS = KinodynamicLimits(v_max=0.5, omega_max=1.5, a_max=0.5, alpha_max=2.0, d_min=0.25)


@dataclass(frozen=True, eq=False)
class LinearCoordFactor(Factor):
    """r = A @ vals[touched] - b over the flat coordinate vector."""

    A: tuple
    b: tuple
    blocks: tuple
    which: FactorKind

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        self._set(self.which, tuple(self.blocks), A.shape[0])

    def residual(self, band: TimedBand) -> np.ndarray:
        vals = Variables.from_band(band).values
        cols = list(touched_coords(self))
        return np.asarray(self.A) @ vals[cols] - np.asarray(self.b)

    def jacobian(self, band: TimedBand) -> np.ndarray:
        return np.asarray(self.A, dtype=float)


@dataclass(frozen=True, eq=False)
class ConstFactor(Factor):
    """Constant residual; useful for pinning exact Lagrangian values."""

    value: tuple
    which: FactorKind

    def __post_init__(self):
        self._set(self.which, (0,), len(self.value))

    def residual(self, band: TimedBand) -> np.ndarray:
        return np.asarray(self.value, dtype=float)

    def jacobian(self, band: TimedBand) -> np.ndarray:
        return np.zeros((len(self.value), 3))


def straight_band(n: int = 5, spacing: float = 0.1, dt: float = 0.25,
                  heading: float = 0.0) -> TimedBand:
    poses = tuple(
        Pose2((k + 1) * spacing * np.cos(heading), (k + 1) * spacing * np.sin(heading), heading)
        for k in range(n)
    )
    return TimedBand(Pose2(0.0, 0.0, heading), poses, tuple([dt] * n))


def random_band(rng: np.random.Generator, n: int = 10) -> TimedBand:
    """Band with smooth geometry: clear displacements, bounded heading steps."""
    x, y = rng.uniform(-1, 1, size=2)
    heading = rng.uniform(-2.0, 2.0)
    start = Pose2(x, y, heading)
    poses = []
    dts = []
    px, py, pb = x, y, heading
    for _ in range(n):
        step = rng.uniform(0.08, 0.3)
        turn = rng.uniform(-0.6, 0.6)
        pb = pb + turn
        px += step * np.cos(pb + rng.uniform(-0.3, 0.3))
        py += step * np.sin(pb + rng.uniform(-0.3, 0.3))
        poses.append(Pose2(px, py, pb))
        dts.append(rng.uniform(0.15, 0.6))
    return TimedBand(start, tuple(poses), tuple(dts))


def small_grid(rng: np.random.Generator, w: int = 16, h: int = 12,
               density: float = 0.12, resolution: float = 0.1) -> OccupancyGrid:
    occ = rng.random((h, w)) < density
    occ[0, 0] = False
    return OccupancyGrid(occupied=occ, resolution=resolution)


def brute_force_clearance(grid: OccupancyGrid, ix: int, iy: int) -> float:
    """Independent oracle: min center-to-center distance to any occupied cell."""
    best = np.inf
    for oy in range(grid.height):
        for ox in range(grid.width):
            if grid.occupied[oy, ox]:
                d = np.hypot(ix - ox, iy - oy) * grid.resolution
                best = min(best, d)
    return best if np.isfinite(best) else np.inf


def central_diff_jacobian(factor: Factor, band: TimedBand, h: float = 1e-6) -> np.ndarray:
    """Finite-difference oracle over the factor's touched coordinates."""
    base = Variables.from_band(band)
    cols = list(touched_coords(factor))
    out = np.zeros((factor.dim, len(cols)))
    for j, col in enumerate(cols):
        vp = base.values.copy()
        vm = base.values.copy()
        vp[col] += h
        vm[col] -= h
        bp = Variables(band.start, vp).to_band()
        bm = Variables(band.start, vm).to_band()
        out[:, j] = (factor.residual(bp) - factor.residual(bm)) / (2 * h)
    return out
