"""Timed-elastic-band trajectory optimization with a variable-splitting solver.

Core pieces: band representation and kinematics (`band`), residual factor
library (`factors`), sparse Levenberg-Marquardt subproblem solver (`nlls`),
the variable-splitting outer loop (`vsloop`), soft-penalty and DWA baselines
(`baselines`), a 2-D kinematic simulator (`sim`, `grid`, `scenarios`) and the
benchmark harness (`bench`). The `service` subpackage wraps everything in a
FastAPI app; `cli` is a thin client over it.
"""

__version__ = "0.1.0"

from .band import (
    DT_FLOOR,
    KinodynamicLimits,
    Pose2,
    TimedBand,
    Twist,
    finite_diff_accel,
    finite_diff_twist,
    init_from_path,
    resize,
    wrap_angle,
)
from .grid import OccupancyGrid, load_pgm, save_pgm
from .sim import PlannerParams, Scenario, plan_once, run_episode
from .vsloop import VSConfig, outer_solve

__all__ = [
    "DT_FLOOR",
    "KinodynamicLimits",
    "OccupancyGrid",
    "PlannerParams",
    "Pose2",
    "Scenario",
    "TimedBand",
    "Twist",
    "VSConfig",
    "finite_diff_accel",
    "finite_diff_twist",
    "init_from_path",
    "load_pgm",
    "outer_solve",
    "plan_once",
    "resize",
    "run_episode",
    "save_pgm",
    "wrap_angle",
    "__version__",
]
