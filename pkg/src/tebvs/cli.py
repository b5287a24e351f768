"""Command-line client for the planning service.

All subcommands go through the HTTP API: against an in-process app by
default, or a remote server with --server. Scenario files are read locally
and shipped inline, so the service itself never touches the filesystem.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .scenarios import ScenarioFormatError, resolve_scenario
from .sim import PlannerParams, Scenario

EXIT_OK = 0
EXIT_PLANNER_FAILURE = 1
EXIT_INVALID_INPUT = 2


def scenario_to_payload(scenario: Scenario, params: PlannerParams) -> dict:
    grid = scenario.grid
    rows = ["".join("1" if c else "0" for c in grid.occupied[iy])
            for iy in range(grid.height)]
    return {
        "grid": {
            "width": grid.width, "height": grid.height,
            "resolution": grid.resolution,
            "origin_x": grid.origin_x, "origin_y": grid.origin_y,
            "rows": rows,
        },
        "start": {"x": scenario.start.x, "y": scenario.start.y,
                  "beta": scenario.start.beta},
        "goal": {"x": scenario.goal.x, "y": scenario.goal.y,
                 "beta": scenario.goal.beta},
        "limits": {
            "v_max": scenario.limits.v_max, "omega_max": scenario.limits.omega_max,
            "a_max": scenario.limits.a_max, "alpha_max": scenario.limits.alpha_max,
            "d_min": scenario.limits.d_min,
        },
        "control_period": scenario.control_period,
        "timeout": scenario.timeout,
        "goal_tol_pos": scenario.goal_tol_pos,
        "goal_tol_head": scenario.goal_tol_head,
        "params": {
            "dt_ref": params.dt_ref, "dt_hysteresis": params.dt_hysteresis,
            "max_poses": params.max_poses, "v_nominal": params.v_nominal,
            "lookahead": params.lookahead, "time_weight": params.time_weight,
            "goal_weight": params.goal_weight, "v_back": params.v_back,
            "direction_weight": params.direction_weight,
            "continuity_weight": params.continuity_weight,
            "rho0": params.rho0, "mu0": params.mu0,
            "max_outer": params.max_outer,
            "max_outer_replan": params.max_outer_replan,
            "inner_iterations_replan": params.inner_iterations_replan,
            "split": "velocity" if params.split_velocity_only else "all",
            "soft_velocity_weight": params.soft.velocity_weight,
            "soft_acceleration_weight": params.soft.acceleration_weight,
            "soft_obstacle_weight": params.soft.obstacle_weight,
            "soft_kinematics_weight": params.soft.kinematics_weight,
            "hinge_margin": params.soft.hinge_margin,
            "dwa_n_v": params.dwa.n_v, "dwa_n_omega": params.dwa.n_omega,
            "dwa_horizon": params.dwa.horizon,
            "dwa_heading_weight": params.dwa.heading_weight,
            "dwa_clearance_weight": params.dwa.clearance_weight,
            "dwa_velocity_weight": params.dwa.velocity_weight,
            "dwa_clearance_saturation": params.dwa.clearance_saturation,
        },
    }


class ServiceClient:
    """POSTs to a remote server when given a URL, else to the in-process app."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, path: str, payload: dict):
        import httpx

        if self.server:
            with httpx.Client(base_url=self.server, timeout=600.0) as client:
                return client.post(path, json=payload)

        import asyncio

        from .service import app

        async def _request():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://service", timeout=600.0
            ) as client:
                return await client.post(path, json=payload)

        return asyncio.run(_request())


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fail_http(resp) -> int:
    try:
        detail = resp.json().get("detail", resp.text)
    except Exception:
        detail = resp.text
    print(f"error: {detail}", file=sys.stderr)
    return EXIT_INVALID_INPUT


def _load_scenario_or_exit(ref: str):
    try:
        return resolve_scenario(ref)
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_INPUT)


def cmd_plan(args) -> int:
    scenario, params = _load_scenario_or_exit(args.scenario)
    client = ServiceClient(args.server)
    resp = client.post("/plan", {"scenario": scenario_to_payload(scenario, params)})
    if resp.status_code != 200:
        return _fail_http(resp)
    body = resp.json()
    import json

    lines = [
        json.dumps({"type": "status", "status": body["status"]}),
        json.dumps({"type": "band", **body["band"]}),
        json.dumps({"type": "kkt", **body["kkt"]}),
        json.dumps({"type": "monotonic", **body["monotonic"]}),
    ]
    text = "\n".join(lines) + "\n" + body["outer_trace"]
    _write_out(text, args.out)
    return EXIT_OK if body["status"] != "inner_abort" else EXIT_PLANNER_FAILURE


def cmd_simulate(args) -> int:
    scenario, params = _load_scenario_or_exit(args.scenario)
    client = ServiceClient(args.server)
    resp = client.post("/simulate", {
        "scenario": scenario_to_payload(scenario, params),
        "planner": args.planner,
        "no_timing": args.no_timing,
    })
    if resp.status_code != 200:
        return _fail_http(resp)
    body = resp.json()
    _write_out(body["trace_csv"], args.out)
    if not body["success"]:
        flags = {k: body[k] for k in ("collision", "timed_out", "no_path")}
        print(f"episode failed: {flags}", file=sys.stderr)
        return EXIT_PLANNER_FAILURE
    return EXIT_OK


def cmd_bench(args) -> int:
    scenario, params = _load_scenario_or_exit(args.scenario)
    client = ServiceClient(args.server)
    resp = client.post("/bench", {
        "scenario": scenario_to_payload(scenario, params),
        "planners": args.planner,
        "repetitions": args.repetitions,
        "no_timing": args.no_timing,
        "format": args.format,
    })
    if resp.status_code != 200:
        return _fail_http(resp)
    body = resp.json()
    _write_out(body["report"], args.out)
    return EXIT_OK if body["all_success"] else EXIT_PLANNER_FAILURE


def cmd_check(args) -> int:
    client = ServiceClient(args.server)
    resp = client.post("/check", {"seed": args.seed})
    if resp.status_code != 200:
        return _fail_http(resp)
    body = resp.json()
    text = "\n".join(body["lines"]) + "\n"
    _write_out(text, args.out)
    return EXIT_OK if body["passed"] else EXIT_PLANNER_FAILURE


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tebvs",
        description="Band trajectory optimization: plan, simulate, benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, planner=False):
        p.add_argument("--scenario", required=True,
                       help="scenario file path or the builtin name 'corridor'")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--server", help="remote service URL (default: in-process)")
        if planner:
            p.add_argument("--planner", choices=["dwa", "teb", "teb-vs"],
                           required=True)

    p_plan = sub.add_parser("plan", help="one-shot band optimization (jsonlines out)")
    common(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_sim = sub.add_parser("simulate", help="run one episode, emit the trace CSV")
    common(p_sim, planner=True)
    p_sim.add_argument("--no-timing", action="store_true",
                       help="zero the plan_ms column for byte-stable output")
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="run the benchmark, emit the report")
    p_bench.add_argument("--scenario", required=True)
    p_bench.add_argument("--out")
    p_bench.add_argument("--server")
    p_bench.add_argument("--planner", action="append", required=True,
                         choices=["dwa", "teb", "teb-vs"],
                         help="repeat for several planners")
    p_bench.add_argument("--repetitions", type=int, default=1)
    p_bench.add_argument("--no-timing", action="store_true")
    p_bench.add_argument("--format", choices=["csv", "jsonlines"],
                         default="jsonlines")
    p_bench.set_defaults(func=cmd_bench)

    p_check = sub.add_parser("check", help="run the seeded self-check suites")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--out")
    p_check.add_argument("--server")
    p_check.set_defaults(func=cmd_check)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
