import json

import pytest
from fastapi.testclient import TestClient

from tebvs.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def open_scenario_payload(goal_x=1.6, size=40, d_min=0.02):
    rows = ["0" * size for _ in range(size)]
    return {
        "grid": {"width": size, "height": size, "resolution": 0.05,
                 "origin_x": 0.0, "origin_y": 0.0, "rows": rows},
        "start": {"x": 0.4, "y": 1.0, "beta": 0.0},
        "goal": {"x": goal_x, "y": 1.0, "beta": 0.0},
        "limits": {"v_max": 0.5, "omega_max": 1.5, "a_max": 0.5,
                   "alpha_max": 2.0, "d_min": d_min},
        "control_period": 0.2,
        "timeout": 60.0,
    }


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"


class TestPlan:
    def test_happy_path(self, client):
        resp = client.post("/plan", json={"scenario": open_scenario_payload()})
        assert resp.status_code == 200
        body = resp.json()
        assert body["band"]["poses"]
        assert len(body["band"]["poses"]) == len(body["band"]["dts"])
        assert body["monotonic"]["passed"] in (True, False)
        first = json.loads(body["outer_trace"].splitlines()[0])
        assert "L_init" in first

    def test_blocked_start_is_400(self, client):
        payload = open_scenario_payload(d_min=0.02)
        rows = list(payload["grid"]["rows"])
        rows[20] = rows[20][:8] + "1" + rows[20][9:]  # occupy the start cell
        payload["grid"]["rows"] = rows
        resp = client.post("/plan", json={"scenario": payload})
        assert resp.status_code == 400
        detail = resp.json()["detail"]
        assert "clearance" in detail or "blocked" in detail

    def test_malformed_grid_is_400(self, client):
        payload = open_scenario_payload()
        payload["grid"]["rows"] = payload["grid"]["rows"][:-1]
        resp = client.post("/plan", json={"scenario": payload})
        assert resp.status_code == 400

    def test_schema_violation_is_422(self, client):
        resp = client.post("/plan", json={"scenario": {"grid": {}}})
        assert resp.status_code == 422


class TestSimulate:
    def test_happy_path(self, client):
        resp = client.post("/simulate", json={
            "scenario": open_scenario_payload(),
            "planner": "teb-vs",
            "no_timing": True,
        })
        assert resp.status_code == 200
        body = resp.json()
        assert body["success"]
        header = body["trace_csv"].splitlines()[0]
        assert header == "t,x,y,beta,v_cmd,omega_cmd,v_real,omega_real,plan_ms"

    def test_unknown_planner_rejected(self, client):
        resp = client.post("/simulate", json={
            "scenario": open_scenario_payload(),
            "planner": "rrt",
        })
        assert resp.status_code == 422

    def test_no_timing_deterministic(self, client):
        req = {"scenario": open_scenario_payload(), "planner": "teb-vs",
               "no_timing": True}
        a = client.post("/simulate", json=req).json()["trace_csv"]
        b = client.post("/simulate", json=req).json()["trace_csv"]
        assert a == b


class TestBench:
    def test_happy_path(self, client):
        resp = client.post("/bench", json={
            "scenario": open_scenario_payload(),
            "planners": ["dwa", "teb-vs"],
            "repetitions": 1,
            "no_timing": True,
        })
        assert resp.status_code == 200
        body = resp.json()
        assert body["all_success"]
        lines = [json.loads(l) for l in body["report"].splitlines()]
        stats = [l for l in lines if l["type"] == "stats"]
        assert len(stats) == 8

    def test_csv_format(self, client):
        resp = client.post("/bench", json={
            "scenario": open_scenario_payload(),
            "planners": ["dwa"],
            "format": "csv",
            "no_timing": True,
        })
        assert resp.status_code == 200
        assert resp.json()["report"].startswith("planner,row,")


class TestCheck:
    def test_seeded_deterministic(self, client):
        a = client.post("/check", json={"seed": 5}).json()
        b = client.post("/check", json={"seed": 5}).json()
        assert a == b
        assert a["passed"]
        assert len(a["lines"]) == 4
