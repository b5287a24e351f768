"""Request/response models for the planning service.

Scenarios travel fully inline (grid rasters included) so the service needs no
filesystem access; the CLI packs local files into these payloads.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class GridPayload(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    resolution: float = Field(gt=0)
    origin_x: float = 0.0
    origin_y: float = 0.0
    rows: list[str] = Field(
        description="height strings of width chars each; '1' = occupied"
    )


class PosePayload(BaseModel):
    x: float
    y: float
    beta: float = 0.0


class LimitsPayload(BaseModel):
    v_max: float = 0.5
    omega_max: float = 1.5
    a_max: float = 0.5
    alpha_max: float = 2.0
    d_min: float = 0.25


class PlannerParamsPayload(BaseModel):
    dt_ref: float = 0.3
    dt_hysteresis: float = 0.1
    max_poses: int = 40
    v_nominal: Optional[float] = None
    lookahead: float = 2.0
    time_weight: float = 0.1
    goal_weight: float = 50.0
    v_back: float = 0.02
    direction_weight: float = 50.0
    continuity_weight: float = 20.0
    rho0: float = 10.0
    mu0: float = 10.0
    max_outer: int = 30
    max_outer_replan: int = 3
    inner_iterations_replan: int = 10
    split: Literal["all", "velocity"] = "all"
    soft_velocity_weight: float = 50.0
    soft_acceleration_weight: float = 30.0
    soft_obstacle_weight: float = 50.0
    soft_kinematics_weight: float = 1000.0
    hinge_margin: float = 0.05
    dwa_n_v: int = 11
    dwa_n_omega: int = 21
    dwa_horizon: float = 1.5
    dwa_heading_weight: float = 0.8
    dwa_clearance_weight: float = 0.2
    dwa_velocity_weight: float = 0.2
    dwa_clearance_saturation: float = 1.0


class ScenarioPayload(BaseModel):
    grid: GridPayload
    start: PosePayload
    goal: PosePayload
    limits: LimitsPayload = LimitsPayload()
    control_period: float = 0.2
    timeout: float = 90.0
    goal_tol_pos: float = 0.1
    goal_tol_head: float = 0.2
    params: PlannerParamsPayload = PlannerParamsPayload()


PlannerName = Literal["dwa", "teb", "teb-vs"]
FormatName = Literal["csv", "jsonlines"]


class PlanRequest(BaseModel):
    scenario: ScenarioPayload


class BandPayload(BaseModel):
    start: PosePayload
    poses: list[PosePayload]
    dts: list[float]


class KKTPayload(BaseModel):
    primal_eq: float
    primal_ineq: float
    comp_slack: float
    dual_sign: float


class MonotonicityPayload(BaseModel):
    passed: bool
    max_violation: float
    violations: int
    flagged: int


class PlanResponse(BaseModel):
    status: str
    band: BandPayload
    kkt: KKTPayload
    monotonic: MonotonicityPayload
    outer_trace: str = Field(description="line-delimited outer iteration records")


class SimulateRequest(BaseModel):
    scenario: ScenarioPayload
    planner: PlannerName
    no_timing: bool = False


class SimulateResponse(BaseModel):
    success: bool
    collision: bool
    timed_out: bool
    no_path: bool
    ticks: int
    trace_csv: str


class BenchRequest(BaseModel):
    scenario: ScenarioPayload
    planners: list[PlannerName]
    repetitions: int = Field(default=1, ge=1)
    no_timing: bool = False
    format: FormatName = "jsonlines"


class BenchResponse(BaseModel):
    all_success: bool
    report: str
    format: FormatName


class CheckRequest(BaseModel):
    seed: int = Field(default=0, ge=0)


class CheckResponse(BaseModel):
    passed: bool
    lines: list[str]


class HealthResponse(BaseModel):
    status: str
    version: str
