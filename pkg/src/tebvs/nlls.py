"""Block-sparse Levenberg-Marquardt solver for the penalized band subproblem.

The subproblem cost is

    sum_i ||r_obj_i||^2  +  rho/2 ||p(x) + v + eta/rho||^2
                         +  mu/2  ||c(x) + zeta/mu||^2

linearized into a single stacked residual with objective rows scaled by
sqrt(2) and penalty rows by sqrt(rho) / sqrt(mu), so that the cost equals
0.5 * ||r||^2 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .band import DT_FLOOR, Pose2, TimedBand
from .factors import Factor, FactorKind, touched_coords

SQRT2 = math.sqrt(2.0)


class NonFiniteCostError(RuntimeError):
    """The subproblem cost is not finite at the current iterate."""


class SingularSystemError(RuntimeError):
    """The damped normal equations could not be solved."""


@dataclass
class Variables:
    """Flat iterate over N = 4I coordinates: [x, y, beta, dt] per step.

    ``free`` masks coordinates the solver may move; fixed coordinates keep
    their values (used to pin poses beyond the always-fixed start, which is
    not part of the vector at all).
    """

    start: Pose2
    values: np.ndarray
    free: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.size % 4 != 0:
            raise ValueError("coordinate vector length must be a multiple of 4")
        if self.free is None:
            self.free = np.ones(self.values.size, dtype=bool)
        else:
            self.free = np.asarray(self.free, dtype=bool).copy()
        self._project()

    @property
    def num_poses(self) -> int:
        return self.values.size // 4

    def _project(self) -> None:
        # dt floor and heading wrap keep the cost well-defined after steps.
        vals = self.values
        two_pi = 2.0 * math.pi
        b = vals[2::4]
        w = b - two_pi * np.round(b / two_pi)
        w[w <= -math.pi] += two_pi
        w[w > math.pi] -= two_pi
        vals[2::4] = w
        np.maximum(vals[3::4], DT_FLOOR, out=vals[3::4])

    @classmethod
    def from_band(cls, band: TimedBand, free: np.ndarray | None = None) -> "Variables":
        vals = np.empty(4 * band.num_poses)
        for k, (pose, dt) in enumerate(zip(band.poses, band.dts)):
            vals[4 * k : 4 * k + 4] = (pose.x, pose.y, pose.beta, dt)
        return cls(band.start, vals, free)

    def to_band(self) -> TimedBand:
        poses = []
        dts = []
        for k in range(self.num_poses):
            x, y, beta, dt = self.values[4 * k : 4 * k + 4]
            poses.append(Pose2(x, y, beta))
            dts.append(dt)
        return TimedBand(self.start, tuple(poses), tuple(dts))

    def with_step(self, delta: np.ndarray) -> "Variables":
        """New iterate after adding a full-length step restricted to free coords."""
        vals = self.values.copy()
        vals[self.free] += delta[self.free]
        return Variables(self.start, vals, self.free)


@dataclass
class SubproblemSpec:
    """Objective factors plus penalized constraints with slack/dual context.

    `compiled` optionally holds the vectorized kernels for the registration
    (see `kernels.compile_factors`); when absent the reference per-factor
    loop is used.
    """

    objective: list[Factor]
    constraints: list[Factor]
    v: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    rho: float
    mu: float
    compiled: object = None

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("penalty parameters must be positive")
        for f in self.objective:
            if f.kind != FactorKind.OBJECTIVE:
                raise ValueError("objective list may only hold objective factors")
        for f in self.constraints:
            if f.kind == FactorKind.OBJECTIVE:
                raise ValueError("constraint list may not hold objective factors")

    def compile(self, vars: "Variables") -> None:
        from .kernels import compile_factors

        self.compiled = compile_factors(
            self.objective + self.constraints, vars.num_poses, vars.start
        )


@dataclass
class LMConfig:
    max_iterations: int = 50
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 1.0 / 3.0
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    cost_tol: float = 1e-10

    def __post_init__(self):
        if not (self.damping_up > 1.0 > self.damping_down > 0.0):
            raise ValueError("damping scales must satisfy up > 1 > down > 0")
        if min(self.max_iterations, self.initial_damping, self.gradient_tol,
               self.step_tol, self.cost_tol) <= 0:
            raise ValueError("all LM configuration values must be positive")


@dataclass
class LMStats:
    iterations: int = 0
    gradient_norm: float = math.inf
    termination: str = "max_iterations"
    cost_trace: list[float] = field(default_factory=list)
    capped: bool = False


def _eq_ineq_rows(spec: SubproblemSpec, band: TimedBand):
    c_parts = [f.residual(band) for f in spec.constraints if f.kind == FactorKind.EQUALITY]
    p_parts = [f.residual(band) for f in spec.constraints if f.kind == FactorKind.INEQUALITY]
    c = np.concatenate(c_parts) if c_parts else np.zeros(0)
    p = np.concatenate(p_parts) if p_parts else np.zeros(0)
    return c, p


def subproblem_cost(spec: SubproblemSpec, vars: Variables) -> float:
    if spec.compiled is not None:
        r = spec.compiled.residuals(vars.values)
        total = float(r[spec.compiled.obj_rows] @ r[spec.compiled.obj_rows])
        p = r[spec.compiled.ineq_rows]
        c = r[spec.compiled.eq_rows]
    else:
        band = vars.to_band()
        total = 0.0
        for f in spec.objective:
            rf = f.residual(band)
            total += float(rf @ rf)
        c, p = _eq_ineq_rows(spec, band)
    if p.size:
        q = p + spec.v + spec.eta / spec.rho
        total += 0.5 * spec.rho * float(q @ q)
    if c.size:
        q = c + spec.zeta / spec.mu
        total += 0.5 * spec.mu * float(q @ q)
    return total


def linearize(spec: SubproblemSpec, vars: Variables) -> tuple[sp.csr_matrix, np.ndarray]:
    """Stacked (J, r) such that subproblem_cost == 0.5 * ||r||^2."""
    if spec.compiled is not None:
        comp = spec.compiled
        r = comp.residuals(vars.values)
        scale = np.empty(comp.n_rows)
        scale[comp.obj_rows] = SQRT2
        scale[comp.ineq_rows] = math.sqrt(spec.rho)
        scale[comp.eq_rows] = math.sqrt(spec.mu)
        res = r.copy()
        if comp.ineq_rows.size:
            res[comp.ineq_rows] += spec.v + spec.eta / spec.rho
        if comp.eq_rows.size:
            res[comp.eq_rows] += spec.zeta / spec.mu
        res *= scale
        data = comp.jacobian_data(vars.values) * scale[comp.nnz_row]
        return comp.csr(data), res

    band = vars.to_band()
    n = vars.values.size
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    res: list[float] = []
    nrows = 0

    def add(factor: Factor, scale: float, shift: np.ndarray | None) -> None:
        nonlocal nrows
        r = factor.residual(band)
        if shift is not None:
            r = r + shift
        J = factor.jacobian(band)
        ccols = touched_coords(factor)
        for k in range(factor.dim):
            res.append(scale * r[k])
            row = nrows + k
            for j, col in enumerate(ccols):
                rows.append(row)
                cols.append(col)
                vals.append(scale * J[k, j])
        nrows += factor.dim

    for f in spec.objective:
        add(f, SQRT2, None)
    sr = math.sqrt(spec.rho)
    sm = math.sqrt(spec.mu)
    ioff = 0
    eoff = 0
    for f in spec.constraints:
        if f.kind == FactorKind.INEQUALITY:
            shift = spec.v[ioff : ioff + f.dim] + spec.eta[ioff : ioff + f.dim] / spec.rho
            add(f, sr, shift)
            ioff += f.dim
        else:
            shift = spec.zeta[eoff : eoff + f.dim] / spec.mu
            add(f, sm, shift)
            eoff += f.dim
    J = sp.csr_matrix((vals, (rows, cols)), shape=(nrows, n))
    return J, np.array(res)


def sparse_normal_solve(J: sp.spmatrix, r: np.ndarray, damping: float) -> np.ndarray:
    """Solve (J^T J + damping * diag(J^T J) + eps I) delta = -J^T r.

    Band factors touch only adjacent variable blocks, so the normal matrix is
    narrow-banded in the interleaved coordinate layout; those systems go
    through a banded Cholesky, anything wider through sparse LU.
    """
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    n = J.shape[1]
    H = (J.T @ J).tocsc()
    diag = H.diagonal()
    g = np.asarray(J.T @ r).ravel()

    coo = H.tocoo()
    bw = int(np.abs(coo.row - coo.col).max()) if coo.nnz else 0
    delta = None
    if bw <= 24 and n:
        ab = np.zeros((bw + 1, n))
        for k in range(1, bw + 1):
            ab[bw - k, k:] = H.diagonal(k)
        ab[bw] = diag * (1.0 + damping) + 1e-12
        try:
            delta = sla.solveh_banded(ab, -g, lower=False)
        except np.linalg.LinAlgError:
            delta = None
    if delta is None:
        reg = sp.diags(damping * diag + 1e-12, shape=(n, n))
        try:
            lu = spla.splu((H + reg).tocsc())
            delta = lu.solve(-g)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"normal equations singular after regularization "
                f"(n={n}, max diag={diag.max() if n else 0:.3e}): {exc}"
            ) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularSystemError(
            f"non-finite solution from normal equations "
            f"(n={n}, damping={damping:.3e}, diag range "
            f"[{diag.min() if n else 0:.3e}, {diag.max() if n else 0:.3e}])"
        )
    return delta


def lm_solve(
    spec: SubproblemSpec, vars0: Variables, config: LMConfig | None = None
) -> tuple[Variables, LMStats]:
    """Minimize the subproblem cost from vars0.

    Accepted steps never increase the cost; the dt floor and heading wrap are
    applied to every candidate before it is scored. Terminates on gradient,
    relative step, relative cost decrease or the iteration cap.

    Raises NonFiniteCostError if the starting cost is not finite.
    """
    config = config or LMConfig()
    stats = LMStats()
    cur = vars0
    if spec.compiled is None:
        spec.compile(cur)
    cost = subproblem_cost(spec, cur)
    if not math.isfinite(cost):
        raise NonFiniteCostError(f"initial subproblem cost is {cost!r}")
    stats.cost_trace.append(cost)
    lam = config.initial_damping
    stalls = 0

    for it in range(config.max_iterations):
        J, r = linearize(spec, cur)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J.data))):
            raise NonFiniteCostError("non-finite residual or Jacobian entries")
        grad = np.asarray(J.T @ r).ravel()
        grad[~cur.free] = 0.0
        gnorm = float(np.abs(grad).max()) if grad.size else 0.0
        stats.gradient_norm = gnorm
        if gnorm < config.gradient_tol:
            stats.termination = "gradient"
            return cur, stats

        Jf = J[:, cur.free] if not cur.free.all() else J
        accepted = False
        for _ in range(20):
            delta_free = sparse_normal_solve(Jf, r, lam)
            delta = np.zeros(cur.values.size)
            delta[cur.free] = delta_free
            # Backtracking along the damped step: kinked residual rows make
            # full Gauss-Newton steps overshoot where a shorter move descends.
            for frac in (1.0, 0.25, 0.05):
                cand = cur.with_step(frac * delta)
                cand_cost = subproblem_cost(spec, cand)
                if math.isfinite(cand_cost) and cand_cost < cost:
                    accepted = True
                    break
            if accepted:
                break
            lam *= config.damping_up
            if lam > 1e14:
                break
        if not accepted:
            # No descent at any damping: stationary (possibly at a residual kink).
            stats.termination = "no_decrease"
            return cur, stats

        stats.iterations = it + 1
        lam_used = lam
        step_inf = float(np.abs(cand.values - cur.values).max())
        rel_decrease = (cost - cand_cost) / max(cost, 1.0)
        cur, cost = cand, cand_cost
        stats.cost_trace.append(cost)
        lam = max(lam * config.damping_down, 1e-15)
        if lam_used <= 1e2:
            stalls = 0
            # Step/cost criteria are only meaningful at moderate damping;
            # a heavily damped micro-step says nothing about stationarity.
            if step_inf < config.step_tol * (1.0 + float(np.abs(cur.values).max())):
                stats.termination = "step"
                return cur, stats
            if rel_decrease < config.cost_tol:
                stats.termination = "cost"
                return cur, stats
        else:
            stalls += 1
            if stalls >= 3 and rel_decrease < config.cost_tol:
                stats.termination = "no_decrease"
                return cur, stats

    stats.termination = "max_iterations"
    stats.capped = True
    return cur, stats


def dump_triplets(J: sp.spmatrix, r: np.ndarray, path: str) -> None:
    """Debug dump: header 'M N nnz', then 'row col value' lines, then residuals.

    The residual block is appended as 'r <index> <value>' lines so one file
    captures a full (J, r) snapshot.
    """
    coo = J.tocoo()
    with open(path, "w") as f:
        f.write(f"{J.shape[0]} {J.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {float(v)!r}\n")
        for i, v in enumerate(r):
            f.write(f"r {i} {float(v)!r}\n")
