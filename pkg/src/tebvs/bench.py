"""Velocity-variation metrics, phase segmentation and the benchmark driver."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .sim import PlannerParams, RunTrace, Scenario, run_episode
from .vsloop import monotonicity_check


class PhaseLabel(enum.Enum):
    ROTATION = "rotation"
    LINEAR = "linear"


def segment_phases(
    trace: RunTrace, omega_threshold: float = 0.1, v_threshold: float = 0.05
) -> list[PhaseLabel]:
    """Label each tick: rotation iff |v| below and |omega| above threshold."""
    if not trace.records:
        raise ValueError("trace is empty")
    labels = []
    for r in trace.records:
        rotating = abs(r.v_real) < v_threshold and abs(r.omega_real) > omega_threshold
        labels.append(PhaseLabel.ROTATION if rotating else PhaseLabel.LINEAR)
    return labels


@dataclass
class VariationStats:
    """Population statistics of per-tick |delta velocity| within one phase."""

    mean: float
    stddev: float
    variance: float
    count: int

    @classmethod
    def empty(cls) -> "VariationStats":
        return cls(math.nan, math.nan, math.nan, 0)

    @classmethod
    def from_samples(cls, samples: list[float]) -> "VariationStats":
        if len(samples) < 1:
            return cls.empty()
        # Sorted reduction makes pooled statistics independent of episode order.
        arr = np.sort(np.asarray(samples, dtype=float))
        mean = float(arr.mean())
        var = float(((arr - mean) ** 2).mean())
        return cls(mean, math.sqrt(var), var, len(arr))


def variation_samples(
    trace: RunTrace,
    phases: list[PhaseLabel],
    channel: str,
    phase: PhaseLabel,
) -> list[float]:
    """|u_t - u_{t-1}| over consecutive same-phase ticks; never across a boundary."""
    if channel not in ("linear", "angular"):
        raise ValueError(f"channel must be 'linear' or 'angular', got {channel!r}")
    values = [
        r.v_real if channel == "linear" else r.omega_real for r in trace.records
    ]
    out = []
    for t in range(1, len(values)):
        if phases[t] == phase and phases[t - 1] == phase:
            out.append(abs(values[t] - values[t - 1]))
    return out


def variation_stats(
    trace: RunTrace,
    phases: list[PhaseLabel],
    channel: str,
    phase: PhaseLabel,
) -> VariationStats:
    samples = variation_samples(trace, phases, channel, phase)
    if len(samples) < 1:
        return VariationStats.empty()
    return VariationStats.from_samples(samples)


# Report rows: (name, channel, phase)
STAT_ROWS = (
    ("angular_rotation", "angular", PhaseLabel.ROTATION),
    ("linear_rotation", "linear", PhaseLabel.ROTATION),
    ("angular_linear", "angular", PhaseLabel.LINEAR),
    ("linear_linear", "linear", PhaseLabel.LINEAR),
)


@dataclass
class EpisodeSummary:
    planner: str
    rep: int
    success: bool
    collision: bool
    timed_out: bool
    no_path: bool
    ticks: int


@dataclass
class MonotonicitySummary:
    traces: int
    violations: int
    max_violation: float
    flagged: int


@dataclass
class BenchReport:
    planners: list[str]
    repetitions: int
    stats: dict[tuple[str, str], VariationStats] = field(default_factory=dict)
    episodes: list[EpisodeSummary] = field(default_factory=list)
    mean_plan_s: dict[str, float] = field(default_factory=dict)
    monotonicity: dict[str, MonotonicitySummary] = field(default_factory=dict)

    def _g6(self, x: float) -> float | None:
        return None if math.isnan(x) else float(f"{x:.6g}")

    def to_jsonlines(self, no_timing: bool = False) -> str:
        lines = [json.dumps({
            "type": "meta", "planners": self.planners,
            "repetitions": self.repetitions,
        })]
        for ep in self.episodes:
            lines.append(json.dumps({
                "type": "episode", "planner": ep.planner, "rep": ep.rep,
                "success": ep.success, "collision": ep.collision,
                "timed_out": ep.timed_out, "no_path": ep.no_path,
                "ticks": ep.ticks,
            }))
        for planner in self.planners:
            for row, _, _ in STAT_ROWS:
                s = self.stats[(planner, row)]
                lines.append(json.dumps({
                    "type": "stats", "planner": planner, "row": row,
                    "mean": self._g6(s.mean), "stddev": self._g6(s.stddev),
                    "variance": self._g6(s.variance), "count": s.count,
                }))
        for planner, summary in sorted(self.monotonicity.items()):
            lines.append(json.dumps({
                "type": "monotonicity", "planner": planner,
                "traces": summary.traces, "violations": summary.violations,
                "max_violation": self._g6(summary.max_violation),
                "flagged": summary.flagged,
            }))
        if not no_timing:
            for planner in self.planners:
                t = self.mean_plan_s.get(planner, math.nan)
                t_out = None if math.isnan(t) else float(f"{t:.3g}")
                lines.append(json.dumps({
                    "type": "timing", "planner": planner, "mean_plan_s": t_out,
                }))
        return "\n".join(lines) + "\n"

    def to_csv(self, no_timing: bool = False) -> str:
        lines = ["planner,row,mean,stddev,variance,count"]
        for planner in self.planners:
            for row, _, _ in STAT_ROWS:
                s = self.stats[(planner, row)]
                cells = [planner, row]
                for v in (s.mean, s.stddev, s.variance):
                    cells.append("" if math.isnan(v) else f"{v:.6g}")
                cells.append(str(s.count))
                lines.append(",".join(cells))
        if not no_timing:
            for planner in self.planners:
                t = self.mean_plan_s.get(planner, math.nan)
                lines.append(
                    f"{planner},plan_time_s,"
                    + ("" if math.isnan(t) else f"{t:.3g}") + ",,,"
                )
        return "\n".join(lines) + "\n"


def run_benchmark(
    scenario: Scenario,
    planners: list[str],
    repetitions: int = 1,
    params: PlannerParams | None = None,
    omega_threshold: float = 0.1,
    v_threshold: float = 0.05,
) -> BenchReport:
    """Run episodes per planner/repetition and pool variation statistics.

    Failed episodes (collision, timeout, no path) are flagged and excluded
    from the pooled statistics. Plan wall time is averaged over every planner
    invocation of the successful episodes.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report = BenchReport(planners=list(planners), repetitions=repetitions)
    for planner in planners:
        pooled: dict[str, list[float]] = {row: [] for row, _, _ in STAT_ROWS}
        plan_times: list[float] = []
        mono_traces = 0
        mono_violations = 0
        mono_max = 0.0
        mono_flagged = 0
        for rep in range(repetitions):
            trace = run_episode(scenario, planner, params)
            report.episodes.append(EpisodeSummary(
                planner=planner, rep=rep, success=trace.success,
                collision=trace.collision, timed_out=trace.timed_out,
                no_path=trace.no_path, ticks=len(trace.records),
            ))
            if not trace.success:
                continue
            phases = segment_phases(trace, omega_threshold, v_threshold)
            for row, channel, phase in STAT_ROWS:
                pooled[row].extend(variation_samples(trace, phases, channel, phase))
            plan_times.extend(trace.plan_times())
            for outer in trace.outer_traces:
                usable = [r for r in outer.records if not r.inner_capped]
                if not usable:
                    mono_flagged += len(outer.records)
                    continue
                mono_traces += 1
                rep_check = monotonicity_check(outer, 1e-6)
                mono_violations += len(rep_check.violations)
                mono_max = max(mono_max, rep_check.max_violation)
                mono_flagged += rep_check.n_flagged
        for row, _, _ in STAT_ROWS:
            report.stats[(planner, row)] = VariationStats.from_samples(pooled[row])
        report.mean_plan_s[planner] = (
            float(np.mean(plan_times)) if plan_times else math.nan
        )
        if mono_traces:
            report.monotonicity[planner] = MonotonicitySummary(
                traces=mono_traces, violations=mono_violations,
                max_violation=mono_max, flagged=mono_flagged,
            )
    return report
