"""Outer variable-splitting loop: slack prox, dual ascent, Lagrangian monitor.

Inequalities p(x) <= 0 are rewritten as p(x) + v = 0 with v >= 0. The
augmented Lagrangian

    L = sum ||r_obj||^2 + eta.(p + v) + rho/2 ||p + v||^2
                        + zeta.c     + mu/2  ||c||^2

is minimized over x (Levenberg-Marquardt on the band), over v in closed form,
then the duals take one ascent step each. The recorded L sequence is checked
for the nonincrease the method is expected to exhibit.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .band import KinodynamicLimits, TimedBand
from .factors import Factor, FactorKind, constraint_rows
from .nlls import (
    LMConfig,
    NonFiniteCostError,
    SubproblemSpec,
    Variables,
    lm_solve,
)


@dataclass
class SlackState:
    """Slacks, duals and penalties for one fixed factor registration."""

    v: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    rho: float
    mu: float
    n: int = 0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("penalties must be positive")
        if self.v.size and self.v.min() < 0:
            raise ValueError("slack must be nonnegative")


@dataclass
class VSConfig:
    rho0: float = 10.0
    mu0: float = 10.0
    max_outer: int = 30
    eps_primal: float = 1e-3
    eps_dual: float = 1e-3
    penalty_growth: float = 2.0
    growth_trigger: float = 0.5
    grow_penalties: bool = False  # fixed penalties match the plain dual updates
    monotonicity_tol: float = 1e-8
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if min(self.rho0, self.mu0, self.eps_primal, self.eps_dual,
               self.penalty_growth, self.growth_trigger, self.monotonicity_tol) <= 0:
            raise ValueError("all VS configuration values must be positive")


TRACE_FIELDS = (
    "n", "L", "F", "primal_eq", "primal_ineq", "x_change",
    "inner_iterations", "inner_termination", "inner_capped", "wall_time",
)


@dataclass
class OuterRecord:
    n: int
    L: float
    F: float
    primal_eq: float
    primal_ineq: float
    x_change: float
    inner_iterations: int
    inner_termination: str
    inner_capped: bool
    wall_time: float


@dataclass
class OuterTrace:
    """Append-only per-iteration log plus the pre-loop Lagrangian value."""

    L_init: float = math.nan
    records: list[OuterRecord] = field(default_factory=list)
    status: str = "converged"

    def to_jsonlines(self) -> str:
        lines = [json.dumps({"L_init": self.L_init, "status": self.status})]
        for rec in self.records:
            lines.append(json.dumps({k: getattr(rec, k) for k in TRACE_FIELDS}))
        return "\n".join(lines) + "\n"


@dataclass
class MonotonicityReport:
    passed: bool
    violations: list[tuple[int, float]]
    max_violation: float
    n_flagged: int


@dataclass
class KKTResiduals:
    primal_eq: float
    primal_ineq: float
    comp_slack: float
    dual_sign: float

    def max_residual(self) -> float:
        return max(self.primal_eq, self.primal_ineq, self.comp_slack, self.dual_sign)


def objective_value(factors: list[Factor], band: TimedBand) -> float:
    """Sum of squared objective residuals (the weighted cost F)."""
    total = 0.0
    for f in factors:
        if f.kind == FactorKind.OBJECTIVE:
            r = f.residual(band)
            total += float(r @ r)
    return total


def augmented_lagrangian_value(
    band: TimedBand, factors: list[Factor], state: SlackState
) -> float:
    c, p = constraint_rows(factors, band)
    if p.size != state.v.size or p.size != state.eta.size or c.size != state.zeta.size:
        raise ValueError(
            f"state dimensions (v={state.v.size}, eta={state.eta.size}, "
            f"zeta={state.zeta.size}) do not match constraints "
            f"(p={p.size}, c={c.size})"
        )
    L = objective_value(factors, band)
    if p.size:
        pv = p + state.v
        L += float(state.eta @ pv) + 0.5 * state.rho * float(pv @ pv)
    if c.size:
        L += float(state.zeta @ c) + 0.5 * state.mu * float(c @ c)
    return L


def slack_update(p: np.ndarray, eta: np.ndarray, rho: float) -> np.ndarray:
    """Closed-form prox: v = max(0, -p - eta / rho)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    p = np.asarray(p, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if p.shape != eta.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs eta {eta.shape}")
    return np.maximum(0.0, -p - eta / rho)


def dual_update_eta(state: SlackState, p: np.ndarray) -> np.ndarray:
    """Ascent step eta + rho * (p + v); expects state.v already updated."""
    p = np.asarray(p, dtype=float)
    if p.shape != state.eta.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs eta {state.eta.shape}")
    return state.eta + state.rho * (p + state.v)


def dual_update_zeta(state: SlackState, c: np.ndarray) -> np.ndarray:
    """Ascent step zeta + mu * c."""
    c = np.asarray(c, dtype=float)
    if c.shape != state.zeta.shape:
        raise ValueError(f"shape mismatch: c {c.shape} vs zeta {state.zeta.shape}")
    return state.zeta + state.mu * c


def init_state(
    band: TimedBand, factors: list[Factor], rho: float, mu: float
) -> SlackState:
    """Zero duals; slack absorbs whatever is feasible at the initial band."""
    c, p = constraint_rows(factors, band)
    return SlackState(
        v=np.maximum(0.0, -p), eta=np.zeros(p.size), zeta=np.zeros(c.size),
        rho=rho, mu=mu,
    )


def _x_change(a: np.ndarray, b: np.ndarray) -> float:
    """Infinity norm of the iterate change, wrap-aware on heading coordinates."""
    if a.size == 0:
        return 0.0
    diff = np.abs(a - b)
    for k in range(a.size // 4):
        j = 4 * k + 2
        d = math.remainder(a[j] - b[j], 2.0 * math.pi)
        diff[j] = abs(d)
    return float(diff.max())


def outer_solve(
    band0: TimedBand,
    factors: list[Factor],
    limits: KinodynamicLimits | None,
    config: VSConfig | None = None,
    vars0: Variables | None = None,
) -> tuple[TimedBand, SlackState, OuterTrace]:
    """Run the full variable-splitting loop on a fixed factor registration.

    Returns the final band, slack/dual state and trace. Never raises for
    solver trouble: non-convergence and inner aborts come back as trace
    status flags with the best iterate seen so far.
    """
    config = config or VSConfig()
    objective = [f for f in factors if f.kind == FactorKind.OBJECTIVE]
    constraints = [f for f in factors if f.kind != FactorKind.OBJECTIVE]
    state = init_state(band0, factors, config.rho0, config.mu0)
    cur = vars0 if vars0 is not None else Variables.from_band(band0)
    from .kernels import compile_factors

    compiled = compile_factors(objective + constraints, cur.num_poses, cur.start)

    trace = OuterTrace()
    trace.L_init = augmented_lagrangian_value(cur.to_band(), factors, state)
    trace.status = "max_outer"

    best_key = (math.inf, math.inf)
    best = (cur.to_band(), state)
    prev_primal = math.inf

    for n in range(config.max_outer):
        t0 = time.perf_counter()
        spec = SubproblemSpec(
            objective, constraints, state.v, state.eta, state.zeta,
            state.rho, state.mu, compiled=compiled,
        )
        try:
            cur_new, lmstats = lm_solve(spec, cur, config.lm)
        except NonFiniteCostError:
            trace.status = "inner_abort"
            break
        band = cur_new.to_band()
        c, p = constraint_rows(constraints, band)
        state.v = slack_update(p, state.eta, state.rho)
        state.eta = dual_update_eta(state, p)
        state.zeta = dual_update_zeta(state, c)
        state.n = n + 1

        L = augmented_lagrangian_value(band, factors, state)
        primal_eq = float(np.abs(c).max()) if c.size else 0.0
        primal_ineq = float(np.maximum(p, 0.0).max()) if p.size else 0.0
        x_change = _x_change(cur_new.values, cur.values)
        trace.records.append(OuterRecord(
            n=n + 1, L=L, F=objective_value(factors, band),
            primal_eq=primal_eq, primal_ineq=primal_ineq, x_change=x_change,
            inner_iterations=lmstats.iterations,
            inner_termination=lmstats.termination,
            inner_capped=lmstats.capped,
            wall_time=time.perf_counter() - t0,
        ))
        cur = cur_new

        key = (max(primal_eq, primal_ineq), L)
        if key < best_key:
            best_key = key
            best = (band, SlackState(state.v.copy(), state.eta.copy(),
                                     state.zeta.copy(), state.rho, state.mu, state.n))

        if primal_eq <= config.eps_primal and primal_ineq <= config.eps_primal \
                and x_change <= config.eps_dual:
            trace.status = "converged"
            return band, state, trace

        primal_max = max(primal_eq, primal_ineq)
        if config.grow_penalties and primal_max > config.growth_trigger * prev_primal:
            state.rho *= config.penalty_growth
            state.mu *= config.penalty_growth
        prev_primal = primal_max

    band, state = best
    return band, state, trace


def monotonicity_check(trace: OuterTrace, tol: float) -> MonotonicityReport:
    """Check the recorded L sequence for increases beyond tol.

    Records whose inner solve hit its iteration cap are flagged and skipped:
    the x-minimization there is unreliable so the comparison bridges to the
    next trustworthy record.
    """
    points: list[tuple[int, float]] = [(0, trace.L_init)]
    n_flagged = 0
    for rec in trace.records:
        if rec.inner_capped:
            n_flagged += 1
            continue
        points.append((rec.n, rec.L))
    if len(points) < 2:
        raise ValueError("trace needs at least 2 usable records")
    violations = []
    for (_, l0), (n1, l1) in zip(points, points[1:]):
        if l1 > l0 + tol:
            violations.append((n1, l1 - l0))
    max_violation = max((v for _, v in violations), default=0.0)
    return MonotonicityReport(
        passed=not violations,
        violations=violations,
        max_violation=max_violation,
        n_flagged=n_flagged,
    )


def kkt_residuals(
    band: TimedBand, factors: list[Factor], state: SlackState
) -> KKTResiduals:
    """Primal feasibility, complementary slackness and dual sign measures."""
    c, p = constraint_rows(factors, band)
    primal_eq = float(np.abs(c).max()) if c.size else 0.0
    primal_ineq = float(np.maximum(p, 0.0).max()) if p.size else 0.0
    comp = float(np.abs(state.eta * (p + state.v)).max()) if p.size else 0.0
    dual_sign = float(np.abs(np.minimum(state.eta, 0.0)).max()) if p.size else 0.0
    return KKTResiduals(primal_eq, primal_ineq, comp, dual_sign)


def constraint_jacobian_margins(band: TimedBand, factors: list[Factor]) -> tuple[float, float]:
    """Diagnostic (e_c, e_p): smallest singular values of the constraint
    Jacobians at the current iterate.

    Reported for inspection only; the monotonicity monitor never gates on
    them (they vanish whenever a Jacobian is rank-deficient, which straight
    band configurations routinely produce).
    """
    from .factors import stack_constraints

    stacked = stack_constraints(factors, band)

    def smallest_sv(J) -> float:
        if min(J.shape) == 0:
            return 0.0
        sv = np.linalg.svd(np.asarray(J.todense()), compute_uv=False)
        return float(sv.min()) if sv.size else 0.0

    return smallest_sv(stacked.Jc), smallest_sv(stacked.Jp)
