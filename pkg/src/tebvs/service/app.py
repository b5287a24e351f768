"""FastAPI app exposing plan / simulate / bench / check over the core package."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..band import KinodynamicLimits, Pose2
from ..baselines import DWAConfig, SoftTEBConfig
from ..bench import run_benchmark
from ..factors import FactorKind
from ..grid import OccupancyGrid
from ..sim import NoPathError, PlannerParams, Scenario, plan_once, run_episode
from ..vsloop import kkt_residuals, monotonicity_check
from . import schemas


def _grid_from_payload(p: schemas.GridPayload) -> OccupancyGrid:
    if len(p.rows) != p.height or any(len(r) != p.width for r in p.rows):
        raise HTTPException(status_code=400, detail="grid rows do not match shape")
    if any(ch not in "01" for row in p.rows for ch in row):
        raise HTTPException(status_code=400, detail="grid rows must be '0'/'1' strings")
    occ = np.array([[ch == "1" for ch in row] for row in p.rows], dtype=bool)
    return OccupancyGrid(occupied=occ, resolution=p.resolution,
                         origin_x=p.origin_x, origin_y=p.origin_y)


def _params_from_payload(p: schemas.PlannerParamsPayload) -> PlannerParams:
    return PlannerParams(
        dt_ref=p.dt_ref, dt_hysteresis=p.dt_hysteresis, max_poses=p.max_poses,
        v_nominal=p.v_nominal, lookahead=p.lookahead,
        time_weight=p.time_weight, goal_weight=p.goal_weight,
        v_back=p.v_back, direction_weight=p.direction_weight,
        continuity_weight=p.continuity_weight,
        rho0=p.rho0, mu0=p.mu0, max_outer=p.max_outer,
        max_outer_replan=p.max_outer_replan,
        inner_iterations_replan=p.inner_iterations_replan,
        split_velocity_only=p.split == "velocity",
        soft=SoftTEBConfig(
            velocity_weight=p.soft_velocity_weight,
            acceleration_weight=p.soft_acceleration_weight,
            obstacle_weight=p.soft_obstacle_weight,
            kinematics_weight=p.soft_kinematics_weight,
            hinge_margin=p.hinge_margin,
        ),
        dwa=DWAConfig(
            n_v=p.dwa_n_v, n_omega=p.dwa_n_omega, horizon=p.dwa_horizon,
            heading_weight=p.dwa_heading_weight,
            clearance_weight=p.dwa_clearance_weight,
            velocity_weight=p.dwa_velocity_weight,
            clearance_saturation=p.dwa_clearance_saturation,
        ),
    )


def _scenario_from_payload(
    p: schemas.ScenarioPayload,
) -> tuple[Scenario, PlannerParams]:
    grid = _grid_from_payload(p.grid)
    limits = KinodynamicLimits(
        v_max=p.limits.v_max, omega_max=p.limits.omega_max, a_max=p.limits.a_max,
        alpha_max=p.limits.alpha_max, d_min=p.limits.d_min,
    )
    try:
        scenario = Scenario(
            grid=grid,
            start=Pose2(p.start.x, p.start.y, p.start.beta),
            goal=Pose2(p.goal.x, p.goal.y, p.goal.beta),
            limits=limits,
            control_period=p.control_period,
            timeout=p.timeout,
            goal_tol_pos=p.goal_tol_pos,
            goal_tol_head=p.goal_tol_head,
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    params = _params_from_payload(p.params)
    params.dwa.period = scenario.control_period
    return scenario, params


def create_app() -> FastAPI:
    app = FastAPI(title="tebvs planning service", version=__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/plan", response_model=schemas.PlanResponse)
    def plan(req: schemas.PlanRequest) -> schemas.PlanResponse:
        scenario, params = _scenario_from_payload(req.scenario)
        try:
            band, state, trace, factors = plan_once(scenario, params)
        except (NoPathError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        constraints = [f for f in factors if f.kind != FactorKind.OBJECTIVE]
        kkt = kkt_residuals(band, constraints, state)
        mono = monotonicity_check(trace, 1e-6)
        return schemas.PlanResponse(
            status=trace.status,
            band=schemas.BandPayload(
                start=schemas.PosePayload(x=band.start.x, y=band.start.y,
                                          beta=band.start.beta),
                poses=[schemas.PosePayload(x=p.x, y=p.y, beta=p.beta)
                       for p in band.poses],
                dts=list(band.dts),
            ),
            kkt=schemas.KKTPayload(
                primal_eq=kkt.primal_eq, primal_ineq=kkt.primal_ineq,
                comp_slack=kkt.comp_slack, dual_sign=kkt.dual_sign,
            ),
            monotonic=schemas.MonotonicityPayload(
                passed=mono.passed, max_violation=mono.max_violation,
                violations=len(mono.violations), flagged=mono.n_flagged,
            ),
            outer_trace=trace.to_jsonlines(),
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        scenario, params = _scenario_from_payload(req.scenario)
        trace = run_episode(scenario, req.planner, params)
        return schemas.SimulateResponse(
            success=trace.success, collision=trace.collision,
            timed_out=trace.timed_out, no_path=trace.no_path,
            ticks=len(trace.records),
            trace_csv=trace.to_csv(no_timing=req.no_timing),
        )

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(req: schemas.BenchRequest) -> schemas.BenchResponse:
        scenario, params = _scenario_from_payload(req.scenario)
        report = run_benchmark(scenario, list(req.planners), req.repetitions, params)
        rendered = (report.to_csv(req.no_timing) if req.format == "csv"
                    else report.to_jsonlines(req.no_timing))
        return schemas.BenchResponse(
            all_success=all(e.success for e in report.episodes),
            report=rendered,
            format=req.format,
        )

    @app.post("/check", response_model=schemas.CheckResponse)
    def check(req: schemas.CheckRequest) -> schemas.CheckResponse:
        from ..checks import run_checks

        passed, lines = run_checks(req.seed)
        return schemas.CheckResponse(passed=passed, lines=lines)

    return app


app = create_app()
