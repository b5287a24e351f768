import json

import numpy as np
import pytest

from tebvs.cli import main
from tebvs.grid import save_pgm

from helpers import small_grid


@pytest.fixture()
def open_scenario_file(tmp_path):
    grid = small_grid(np.random.default_rng(0), w=40, h=40, density=0.0,
                      resolution=0.05)
    save_pgm(grid, tmp_path / "open.pgm")
    scenario = tmp_path / "open.scenario"
    scenario.write_text(
        "grid: open.pgm\n"
        "start_x: 0.4\nstart_y: 1.0\nstart_beta: 0.0\n"
        "goal_x: 1.6\ngoal_y: 1.0\ngoal_beta: 0.0\n"
        "d_min: 0.02\ntimeout: 60.0\n"
    )
    return scenario


class TestSimulateCommand:
    def test_success_exit_zero(self, open_scenario_file, tmp_path):
        out = tmp_path / "trace.csv"
        code = main(["simulate", "--scenario", str(open_scenario_file),
                     "--planner", "teb-vs", "--no-timing", "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("t,x,y,beta")
        assert len(lines) > 2

    def test_missing_grid_exit_two(self, tmp_path, capsys):
        scenario = tmp_path / "bad.scenario"
        scenario.write_text(
            "grid: nowhere.pgm\nstart_x: 0.4\nstart_y: 1.0\n"
            "goal_x: 1.6\ngoal_y: 1.0\n"
        )
        code = main(["simulate", "--scenario", str(scenario),
                     "--planner", "dwa"])
        assert code == 2
        assert "grid file not found" in capsys.readouterr().err

    def test_unknown_key_exit_two_with_line(self, tmp_path, capsys):
        scenario = tmp_path / "bad.scenario"
        scenario.write_text("grid: g.pgm\nwheelbase: 0.3\n")
        code = main(["simulate", "--scenario", str(scenario), "--planner", "dwa"])
        assert code == 2
        err = capsys.readouterr().err
        assert "unknown key" in err
        assert ":2:" in err

    def test_timeout_failure_exit_one(self, tmp_path, capsys):
        grid = small_grid(np.random.default_rng(0), w=40, h=40, density=0.0,
                          resolution=0.05)
        save_pgm(grid, tmp_path / "open.pgm")
        scenario = tmp_path / "s.scenario"
        scenario.write_text(
            "grid: open.pgm\nstart_x: 0.4\nstart_y: 1.0\n"
            "goal_x: 1.6\ngoal_y: 1.0\nd_min: 0.02\ntimeout: 0.0\n"
        )
        code = main(["simulate", "--scenario", str(scenario), "--planner", "dwa"])
        assert code == 1

    def test_byte_identical_reruns(self, open_scenario_file, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        for out in (out1, out2):
            code = main(["simulate", "--scenario", str(open_scenario_file),
                         "--planner", "teb-vs", "--no-timing", "--out", str(out)])
            assert code == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestBenchCommand:
    def test_report_and_exit(self, open_scenario_file, tmp_path):
        out = tmp_path / "report.jsonl"
        code = main(["bench", "--scenario", str(open_scenario_file),
                     "--planner", "dwa", "--planner", "teb-vs",
                     "--no-timing", "--out", str(out)])
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[0]["type"] == "meta"
        assert {l["planner"] for l in lines if l["type"] == "stats"} == {"dwa", "teb-vs"}

    def test_byte_identical_reruns(self, open_scenario_file, tmp_path):
        outs = []
        for name in ("r1.jsonl", "r2.jsonl"):
            out = tmp_path / name
            code = main(["bench", "--scenario", str(open_scenario_file),
                         "--planner", "teb-vs", "--no-timing", "--out", str(out)])
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestCheckCommand:
    def test_seeded_identical_output(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        assert main(["check", "--seed", "7", "--out", str(a)]) == 0
        assert main(["check", "--seed", "7", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert all(l.startswith("PASS") for l in a.read_text().splitlines())


class TestPlanCommand:
    def test_plan_writes_band_and_trace(self, open_scenario_file, tmp_path):
        out = tmp_path / "plan.jsonl"
        code = main(["plan", "--scenario", str(open_scenario_file),
                     "--out", str(out)])
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        kinds = [l.get("type") for l in lines[:4]]
        assert kinds == ["status", "band", "kkt", "monotonic"]
        assert "L_init" in lines[4]


class TestBuiltinScenario:
    def test_corridor_name_resolves(self):
        from tebvs.scenarios import resolve_scenario

        scenario, params = resolve_scenario("corridor")
        assert scenario.grid.width == 240
        assert scenario.start.x == 2.0
        assert scenario.goal.x == 9.0
