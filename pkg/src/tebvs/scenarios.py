"""Scenario config files (key: value text) and the bundled corridor world."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .band import KinodynamicLimits, Pose2
from .grid import GridFormatError, OccupancyGrid, load_pgm
from .sim import PlannerParams, Scenario


class ScenarioFormatError(ValueError):
    """Malformed scenario config; message carries file:line context."""


_POSE_KEYS = ("start_x", "start_y", "start_beta", "goal_x", "goal_y", "goal_beta")
_LIMIT_KEYS = ("v_max", "omega_max", "a_max", "alpha_max", "d_min")
_EPISODE_KEYS = ("control_period", "timeout", "goal_tol_pos", "goal_tol_head")
_PLANNER_FLOAT_KEYS = (
    "dt_ref", "dt_hysteresis", "v_nominal", "lookahead", "time_weight",
    "goal_weight", "v_back", "direction_weight", "continuity_weight",
    "rho0", "mu0", "hinge_margin",
    "soft_velocity_weight", "soft_acceleration_weight",
    "soft_obstacle_weight", "soft_kinematics_weight",
    "dwa_horizon", "dwa_heading_weight", "dwa_clearance_weight",
    "dwa_velocity_weight", "dwa_clearance_saturation",
)
_PLANNER_INT_KEYS = (
    "max_poses", "max_outer", "max_outer_replan", "inner_iterations_replan",
    "dwa_n_v", "dwa_n_omega",
)
_STRING_KEYS = ("grid", "split")

KNOWN_KEYS = frozenset(
    _POSE_KEYS + _LIMIT_KEYS + _EPISODE_KEYS
    + _PLANNER_FLOAT_KEYS + _PLANNER_INT_KEYS + _STRING_KEYS
)

_REQUIRED_KEYS = ("grid", "start_x", "start_y", "goal_x", "goal_y")

_DEFAULTS = {
    "start_beta": 0.0,
    "goal_beta": 0.0,
    "v_max": 0.5,
    "omega_max": 1.5,
    "a_max": 0.5,
    "alpha_max": 2.0,
    "d_min": 0.25,
    "control_period": 0.2,
    "timeout": 90.0,
    "goal_tol_pos": 0.1,
    "goal_tol_head": 0.2,
}


def parse_scenario_text(text: str, name: str = "<scenario>") -> dict[str, object]:
    """Parse `key: value` lines; unknown keys and bad values are rejected."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ScenarioFormatError(f"{name}:{lineno}: expected 'key: value', got {raw!r}")
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ScenarioFormatError(f"{name}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioFormatError(f"{name}:{lineno}: duplicate key {key!r}")
        if key in _STRING_KEYS:
            if key == "split" and value not in ("all", "velocity"):
                raise ScenarioFormatError(
                    f"{name}:{lineno}: split must be 'all' or 'velocity', got {value!r}"
                )
            values[key] = value
        elif key in _PLANNER_INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError as exc:
                raise ScenarioFormatError(
                    f"{name}:{lineno}: key {key!r} needs an integer, got {value!r}"
                ) from exc
        else:
            try:
                values[key] = float(value)
            except ValueError as exc:
                raise ScenarioFormatError(
                    f"{name}:{lineno}: key {key!r} needs a number, got {value!r}"
                ) from exc
    for key in _REQUIRED_KEYS:
        if key not in values:
            raise ScenarioFormatError(f"{name}: missing required key {key!r}")
    return values


def scenario_from_values(
    values: dict[str, object], grid: OccupancyGrid
) -> tuple[Scenario, PlannerParams]:
    get = lambda k: values.get(k, _DEFAULTS.get(k))
    limits = KinodynamicLimits(
        v_max=get("v_max"), omega_max=get("omega_max"), a_max=get("a_max"),
        alpha_max=get("alpha_max"), d_min=get("d_min"),
    )
    try:
        scenario = Scenario(
            grid=grid,
            start=Pose2(get("start_x"), get("start_y"), get("start_beta")),
            goal=Pose2(get("goal_x"), get("goal_y"), get("goal_beta")),
            limits=limits,
            control_period=get("control_period"),
            timeout=get("timeout"),
            goal_tol_pos=get("goal_tol_pos"),
            goal_tol_head=get("goal_tol_head"),
        )
    except ValueError as exc:
        raise ScenarioFormatError(str(exc)) from exc

    params = PlannerParams()
    for key in _PLANNER_FLOAT_KEYS + _PLANNER_INT_KEYS:
        if key not in values:
            continue
        val = values[key]
        if key.startswith("soft_"):
            setattr(params.soft, key.removeprefix("soft_"), val)
        elif key == "hinge_margin":
            params.soft.hinge_margin = val
        elif key.startswith("dwa_"):
            attr = key.removeprefix("dwa_")
            setattr(params.dwa, attr, val)
        else:
            setattr(params, key, val)
    if values.get("split") == "velocity":
        params.split_velocity_only = True
    params.dwa.period = scenario.control_period
    return scenario, params


def load_scenario(path: str | Path) -> tuple[Scenario, PlannerParams]:
    """Load a scenario file; the grid path is resolved relative to it."""
    path = Path(path)
    if not path.exists():
        raise ScenarioFormatError(f"scenario file not found: {path}")
    values = parse_scenario_text(path.read_text(), str(path))
    grid_path = Path(values["grid"])
    if not grid_path.is_absolute():
        grid_path = path.parent / grid_path
    if not grid_path.exists():
        raise ScenarioFormatError(f"{path}: grid file not found: {grid_path}")
    try:
        grid = load_pgm(grid_path)
    except GridFormatError as exc:
        raise ScenarioFormatError(str(exc)) from exc
    return scenario_from_values(values, grid)


def build_corridor_grid() -> OccupancyGrid:
    """12 m x 10 m room at 0.05 m resolution, two walls forming a passage.

    Matches the shipped asset bit for bit; the asset is the versioned source
    of truth, this builder regenerates it.
    """
    res = 0.05
    width, height = 240, 200
    occ = np.zeros((height, width), dtype=bool)
    xs = (np.arange(width) + 0.5) * res
    ys = (np.arange(height) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    border = 0.1
    occ |= (X < border) | (X > 12.0 - border) | (Y < border) | (Y > 10.0 - border)
    in_span = (X >= 4.5) & (X <= 7.5)
    occ |= in_span & (Y >= 3.9) & (Y <= 4.1)
    occ |= in_span & (Y >= 5.9) & (Y <= 6.1)
    return OccupancyGrid(occupied=occ, resolution=res, origin_x=0.0, origin_y=0.0)


CORRIDOR_SCENARIO_TEXT = """\
# Corridor room: left-to-right run through a wall passage.
grid: corridor.pgm
start_x: 2.0
start_y: 5.0
start_beta: 3.141592653589793
goal_x: 9.0
goal_y: 5.0
goal_beta: 0.0
v_max: 0.5
omega_max: 1.5
a_max: 0.5
alpha_max: 2.0
d_min: 0.25
control_period: 0.2
timeout: 90.0
goal_tol_pos: 0.1
goal_tol_head: 0.2
"""


def asset_path(name: str) -> Path:
    return Path(resources.files("tebvs").joinpath("assets", name))


def load_corridor() -> tuple[Scenario, PlannerParams]:
    return load_scenario(asset_path("corridor.scenario"))


def resolve_scenario(ref: str) -> tuple[Scenario, PlannerParams]:
    """Resolve a --scenario value: the builtin name 'corridor' or a file path."""
    if ref == "corridor":
        return load_corridor()
    return load_scenario(ref)
