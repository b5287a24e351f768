"""Vectorized evaluation of a fixed factor registration.

The per-factor objects in `factors` stay the reference implementation; this
module compiles a registration into grouped numpy kernels with a precomputed
CSR sparsity pattern so the solver's hot loop avoids Python-level assembly.
Factor classes it does not know fall back to per-factor evaluation, so
synthetic test factors keep working through the same pipe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .band import Pose2, TimedBand
from .baselines import HingeFactor, SquaredEqualityFactor
from .factors import (
    AccelerationFactor,
    DriveDirectionFactor,
    Factor,
    FactorKind,
    GoalFactor,
    KinematicsFactor,
    ObstacleFactor,
    StartTwistFactor,
    TimeFactor,
    VelocityFactor,
    touched_coords,
)

TWO_PI = 2.0 * math.pi


def wrap_vec(theta: np.ndarray) -> np.ndarray:
    w = theta - TWO_PI * np.round(theta / TWO_PI)
    w = np.where(w <= -math.pi, w + TWO_PI, w)
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass
class _Geometry:
    """Per-segment arrays shared by the kernels; start pose included at index 0."""

    px: np.ndarray
    py: np.ndarray
    pb: np.ndarray
    dts: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dist: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    dbeta: np.ndarray
    bmid_cos: np.ndarray
    bmid_sin: np.ndarray


def _geometry(values: np.ndarray, start: Pose2) -> _Geometry:
    px = np.concatenate(([start.x], values[0::4]))
    py = np.concatenate(([start.y], values[1::4]))
    pb = np.concatenate(([start.beta], values[2::4]))
    dts = values[3::4]
    dx = px[1:] - px[:-1]
    dy = py[1:] - py[:-1]
    dist = np.sqrt(dx * dx + dy * dy)
    safe = dist > 1e-12
    ux = np.where(safe, dx / np.where(safe, dist, 1.0), 0.0)
    uy = np.where(safe, dy / np.where(safe, dist, 1.0), 0.0)
    dbeta = wrap_vec(pb[1:] - pb[:-1])
    bmid = pb[:-1] + 0.5 * dbeta
    return _Geometry(px, py, pb, dts, dx, dy, dist, ux, uy, dbeta,
                     np.cos(bmid), np.sin(bmid))


def _sgn_arr(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


class _Group:
    """One vectorized kernel over same-class factors with identical layout."""

    def __init__(self, rows: np.ndarray, jpos: np.ndarray):
        self.rows = rows  # flat residual-row indices, per factor x dim
        self.jpos = jpos  # flat positions into the jacobian data array


def compile_factors(
    factors: list[Factor], num_poses: int, start: Pose2
) -> "CompiledFactors":
    return CompiledFactors(factors, num_poses, start)


class CompiledFactors:
    def __init__(self, factors: list[Factor], num_poses: int, start: Pose2):
        self.num_poses = num_poses
        self.start = start
        self.n_coords = 4 * num_poses

        indptr = [0]
        indices: list[int] = []
        row_kinds: list[int] = []  # 0 objective, 1 inequality, 2 equality
        groups: dict[tuple, dict] = {}
        fallback: list[tuple[Factor, int]] = []
        row = 0
        jpos = 0
        for f in factors:
            cols = touched_coords(f)
            key = self._group_key(f)
            if key is not None:
                g = groups.setdefault(key, {"factors": [], "rows": [], "jpos": []})
                g["factors"].append(f)
                g["rows"].append(row)
                g["jpos"].append(jpos)
            else:
                fallback.append((f, row))
            kind = {FactorKind.OBJECTIVE: 0, FactorKind.INEQUALITY: 1,
                    FactorKind.EQUALITY: 2}[f.kind]
            for _ in range(f.dim):
                indices.extend(cols)
                indptr.append(len(indices))
                row_kinds.append(kind)
            row += f.dim
            jpos += f.dim * len(cols)

        self.n_rows = row
        self.nnz = jpos
        self.indptr = np.asarray(indptr, dtype=np.int32)
        self.indices = np.asarray(indices, dtype=np.int32)
        kinds = np.asarray(row_kinds, dtype=np.int8)
        self.obj_rows = np.nonzero(kinds == 0)[0]
        self.ineq_rows = np.nonzero(kinds == 1)[0]
        self.eq_rows = np.nonzero(kinds == 2)[0]
        # Row index of every jacobian entry, for row-wise scaling.
        self.nnz_row = np.repeat(
            np.arange(self.n_rows), np.diff(self.indptr)
        ).astype(np.int32)
        self.fallback = fallback
        self.groups = {
            key: self._finalize_group(key, g) for key, g in groups.items()
        }

    @staticmethod
    def _group_key(f: Factor):
        if isinstance(f, TimeFactor):
            return ("time",)
        if isinstance(f, GoalFactor):
            return ("goal",)
        if isinstance(f, KinematicsFactor):
            return ("kin", f.i == 0)
        if isinstance(f, VelocityFactor):
            return ("vel", f.i == 0)
        if isinstance(f, AccelerationFactor):
            return ("acc", f.i == 0)
        if isinstance(f, DriveDirectionFactor):
            return ("dir", f.i == 0)
        if isinstance(f, ObstacleFactor):
            return ("obs", id(f.grid))
        if isinstance(f, StartTwistFactor):
            return ("startacc",)
        if isinstance(f, HingeFactor):
            inner = CompiledFactors._group_key(f.inner)
            return ("hinge",) + inner if inner is not None else None
        if isinstance(f, SquaredEqualityFactor):
            inner = CompiledFactors._group_key(f.inner)
            return ("sqeq",) + inner if inner is not None else None
        return None

    def _finalize_group(self, key, g):
        fs = g["factors"]
        dim = fs[0].dim
        ncols = len(touched_coords(fs[0]))
        rows = np.concatenate([
            np.arange(r, r + dim, dtype=np.int64) for r in g["rows"]
        ])
        jpos = np.concatenate([
            np.arange(p, p + dim * ncols, dtype=np.int64) for p in g["jpos"]
        ])
        data = {"rows": rows, "jpos": jpos, "n": len(fs)}
        base = key[0]
        inner_fs = fs
        if base in ("hinge", "sqeq"):
            data["weights"] = np.array([f.w for f in fs])
            if base == "hinge":
                data["margin"] = np.array([f.margin for f in fs])
            inner_fs = [f.inner for f in fs]
            key = key[1:]
            base = key[0]
        data["base"] = base
        if base == "time":
            data["i"] = np.array([f.i for f in inner_fs], dtype=np.int64)
            data["sw"] = np.array([math.sqrt(f.w) for f in inner_fs])
        elif base == "goal":
            data["pi"] = np.array([f.pose_index for f in inner_fs], dtype=np.int64)
            data["tx"] = np.array([f.target.x for f in inner_fs])
            data["ty"] = np.array([f.target.y for f in inner_fs])
            data["tb"] = np.array([f.target.beta for f in inner_fs])
            data["sw"] = np.array([math.sqrt(f.w) for f in inner_fs])
        elif base in ("kin", "vel", "acc", "dir"):
            data["i"] = np.array([f.i for f in inner_fs], dtype=np.int64)
            data["from_free"] = not key[1]
            if base == "vel":
                data["vmax"] = np.array([f.limits.v_max for f in inner_fs])
                data["wmax"] = np.array([f.limits.omega_max for f in inner_fs])
            if base == "acc":
                data["amax"] = np.array([f.limits.a_max for f in inner_fs])
                data["almax"] = np.array([f.limits.alpha_max for f in inner_fs])
            if base == "dir":
                data["vback"] = np.array([f.v_back for f in inner_fs])
        elif base == "obs":
            data["pi"] = np.array([f.pose_index for f in inner_fs], dtype=np.int64)
            data["dmin"] = np.array([f.d_min for f in inner_fs])
            data["grid"] = inner_fs[0].grid
        elif base == "startacc":
            data["vn"] = np.array([abs(f.v_now) for f in inner_fs])
            data["wn"] = np.array([f.omega_now for f in inner_fs])
            data["amax"] = np.array([f.limits.a_max for f in inner_fs])
            data["almax"] = np.array([f.limits.alpha_max for f in inner_fs])
        return data

    # -- clearance kernels -------------------------------------------------

    @staticmethod
    def _clearance_and_grad(grid, x: np.ndarray, y: np.ndarray):
        res = grid.resolution
        w, h = grid.width, grid.height
        inside = (
            (x >= grid.origin_x) & (y >= grid.origin_y)
            & (x <= grid.origin_x + w * res) & (y <= grid.origin_y + h * res)
        )
        fx = np.clip((x - grid.origin_x) / res - 0.5, 0.0, w - 1.0)
        fy = np.clip((y - grid.origin_y) / res - 0.5, 0.0, h - 1.0)
        ix = np.minimum(fx.astype(np.int64), w - 2)
        iy = np.minimum(fy.astype(np.int64), h - 2)
        tx = fx - ix
        ty = fy - iy
        d = grid.distance_field
        d00 = d[iy, ix]
        d10 = d[iy, ix + 1]
        d01 = d[iy + 1, ix]
        d11 = d[iy + 1, ix + 1]
        val = ((1 - tx) * (1 - ty) * d00 + tx * (1 - ty) * d10
               + (1 - tx) * ty * d01 + tx * ty * d11)
        gx = ((1 - ty) * (d10 - d00) + ty * (d11 - d01)) / res
        gy = ((1 - tx) * (d01 - d00) + tx * (d11 - d10)) / res
        return np.where(inside, val, 0.0), np.where(inside, gx, 0.0), \
            np.where(inside, gy, 0.0)

    # -- evaluation ---------------------------------------------------------

    def _group_rows(self, data, geo: _Geometry):
        base = data["base"]
        if base == "time":
            return data["sw"] * geo.dts[data["i"]]
        if base == "goal":
            pi = data["pi"]
            r = np.empty(3 * len(pi))
            r[0::3] = data["sw"] * (geo.px[pi] - data["tx"])
            r[1::3] = data["sw"] * (geo.py[pi] - data["ty"])
            r[2::3] = data["sw"] * wrap_vec(geo.pb[pi] - data["tb"])
            return r
        if base == "kin":
            i = data["i"]
            return geo.bmid_cos[i] * geo.dy[i] - geo.bmid_sin[i] * geo.dx[i]
        if base == "vel":
            i = data["i"]
            r = np.empty(2 * len(i))
            r[0::2] = geo.dist[i] / geo.dts[i] - data["vmax"]
            r[1::2] = np.abs(geo.dbeta[i]) / geo.dts[i] - data["wmax"]
            return r
        if base == "acc":
            i = data["i"]
            dt1, dt2 = geo.dts[i], geo.dts[i + 1]
            m = 0.5 * (dt1 + dt2)
            a = (geo.dist[i + 1] / dt2 - geo.dist[i] / dt1) / m
            al = (geo.dbeta[i + 1] / dt2 - geo.dbeta[i] / dt1) / m
            r = np.empty(2 * len(i))
            r[0::2] = np.abs(a) - data["amax"]
            r[1::2] = np.abs(al) - data["almax"]
            return r
        if base == "dir":
            i = data["i"]
            cf = np.cos(geo.pb[i])
            sf = np.sin(geo.pb[i])
            proj = geo.dx[i] * cf + geo.dy[i] * sf
            return -proj / geo.dts[i] - data["vback"]
        if base == "obs":
            pi = data["pi"]
            val, _, _ = self._clearance_and_grad(
                data["grid"], geo.px[pi], geo.py[pi]
            )
            return data["dmin"] - val
        if base == "startacc":
            dt = geo.dts[0]
            a = (geo.dist[0] / dt - data["vn"]) / dt
            al = (geo.dbeta[0] / dt - data["wn"]) / dt
            r = np.empty(2 * data["n"])
            r[0::2] = np.abs(a) - data["amax"]
            r[1::2] = np.abs(al) - data["almax"]
            return r
        raise AssertionError(base)

    def _group_jac(self, data, geo: _Geometry):
        base = data["base"]
        if base == "time":
            return data["sw"].copy()
        if base == "goal":
            n = data["n"]
            out = np.zeros((n, 3, 3))
            out[:, 0, 0] = data["sw"]
            out[:, 1, 1] = data["sw"]
            out[:, 2, 2] = data["sw"]
            return out.ravel()
        if base == "kin":
            i = data["i"]
            c, s = geo.bmid_cos[i], geo.bmid_sin[i]
            drm = -s * geo.dy[i] - c * geo.dx[i]
            to_cols = [-s, c, 0.5 * drm]
            cols = ([s, -c, 0.5 * drm] + to_cols) if data["from_free"] else to_cols
            return np.stack(cols, axis=1).ravel()
        if base == "vel":
            i = data["i"]
            dt = geo.dts[i]
            ux, uy = geo.ux[i], geo.uy[i]
            sw = _sgn_arr(geo.dbeta[i])
            z = np.zeros_like(dt)
            row1 = [ux / dt, uy / dt, z, -geo.dist[i] / dt**2]
            row2 = [z, z, sw / dt, -np.abs(geo.dbeta[i]) / dt**2]
            if data["from_free"]:
                row1 = [-ux / dt, -uy / dt, z] + row1
                row2 = [z, z, -sw / dt] + row2
            block = np.stack(row1 + row2, axis=1)
            return block.ravel()
        if base == "acc":
            i = data["i"]
            dt1, dt2 = geo.dts[i], geo.dts[i + 1]
            m = 0.5 * (dt1 + dt2)
            v1, v2 = geo.dist[i] / dt1, geo.dist[i + 1] / dt2
            w1, w2 = geo.dbeta[i] / dt1, geo.dbeta[i + 1] / dt2
            a = (v2 - v1) / m
            al = (w2 - w1) / m
            sa, sl = _sgn_arr(a), _sgn_arr(al)
            u1x, u1y = geo.ux[i], geo.uy[i]
            u2x, u2y = geo.ux[i + 1], geo.uy[i + 1]
            z = np.zeros_like(m)
            row1 = [
                sa * (-u2x / dt2 - u1x / dt1) / m,
                sa * (-u2y / dt2 - u1y / dt1) / m,
                z,
                sa * (v1 / dt1 - 0.5 * a) / m,
                sa * u2x / (dt2 * m),
                sa * u2y / (dt2 * m),
                z,
                sa * (-v2 / dt2 - 0.5 * a) / m,
            ]
            row2 = [
                z, z,
                sl * (-1.0 / dt2 - 1.0 / dt1) / m,
                sl * (w1 / dt1 - 0.5 * al) / m,
                z, z,
                sl / (dt2 * m),
                sl * (-w2 / dt2 - 0.5 * al) / m,
            ]
            if data["from_free"]:
                row1 = [sa * u1x / (dt1 * m), sa * u1y / (dt1 * m), z] + row1
                row2 = [z, z, sl / (dt1 * m)] + row2
            block = np.stack(row1 + row2, axis=1)
            return block.ravel()
        if base == "dir":
            i = data["i"]
            dt = geo.dts[i]
            cf = np.cos(geo.pb[i])
            sf = np.sin(geo.pb[i])
            dx, dy = geo.dx[i], geo.dy[i]
            proj = dx * cf + dy * sf
            z = np.zeros_like(dt)
            cols = [-cf / dt, -sf / dt, z, proj / dt**2]
            if data["from_free"]:
                cols = [cf / dt, sf / dt, (dx * sf - dy * cf) / dt] + cols
            return np.stack(cols, axis=1).ravel()
        if base == "obs":
            pi = data["pi"]
            _, gx, gy = self._clearance_and_grad(
                data["grid"], geo.px[pi], geo.py[pi]
            )
            return np.stack([-gx, -gy, np.zeros_like(gx)], axis=1).ravel()
        if base == "startacc":
            dt = geo.dts[0]
            dist, ux, uy = geo.dist[0], geo.ux[0], geo.uy[0]
            a = (dist / dt - data["vn"]) / dt
            al = (geo.dbeta[0] / dt - data["wn"]) / dt
            sa, sl = _sgn_arr(a), _sgn_arr(al)
            z = np.zeros(data["n"])
            block = np.stack([
                sa * ux / dt**2, sa * uy / dt**2, z,
                sa * (-2.0 * dist / dt**3 + data["vn"] / dt**2),
                z, z, sl / dt**2,
                sl * (-2.0 * geo.dbeta[0] / dt**3 + data["wn"] / dt**2),
            ], axis=1)
            return block.ravel()
        raise AssertionError(base)

    def residuals(self, values: np.ndarray, band: TimedBand | None = None) -> np.ndarray:
        geo = _geometry(values, self.start)
        out = np.zeros(self.n_rows)
        for data in self.groups.values():
            r = self._group_rows(data, geo)
            if "weights" in data:
                if "margin" in data:
                    per = np.repeat(np.sqrt(data["weights"]),
                                    len(data["rows"]) // data["n"])
                    marg = np.repeat(data["margin"],
                                     len(data["rows"]) // data["n"])
                    r = per * np.maximum(0.0, r + marg)
                else:
                    per = np.repeat(np.sqrt(data["weights"]),
                                    len(data["rows"]) // data["n"])
                    r = per * r
            out[data["rows"]] = r
        if self.fallback:
            if band is None:
                band = _values_to_band(values, self.start)
            for f, row in self.fallback:
                out[row : row + f.dim] = f.residual(band)
        return out

    def jacobian_data(self, values: np.ndarray, band: TimedBand | None = None
                      ) -> np.ndarray:
        geo = _geometry(values, self.start)
        out = np.zeros(self.nnz)
        for data in self.groups.values():
            jd = self._group_jac(data, geo)
            if "weights" in data:
                ncols = len(data["jpos"]) // len(data["rows"])
                if "margin" in data:
                    r = self._group_rows(data, geo)
                    marg = np.repeat(data["margin"],
                                     len(data["rows"]) // data["n"])
                    active = (r + marg >= 0).astype(float)
                    per = np.repeat(np.sqrt(data["weights"]),
                                    len(data["rows"]) // data["n"])
                    jd = jd * np.repeat(per * active, ncols)
                else:
                    per = np.repeat(np.sqrt(data["weights"]),
                                    len(data["rows"]) // data["n"])
                    jd = jd * np.repeat(per, ncols)
            out[data["jpos"]] = jd
        if self.fallback:
            if band is None:
                band = _values_to_band(values, self.start)
            for f, row in self.fallback:
                lo = self.indptr[row]
                hi = self.indptr[row + f.dim]
                out[lo:hi] = f.jacobian(band).ravel()
        return out

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.n_rows, self.n_coords))


def _values_to_band(values: np.ndarray, start: Pose2) -> TimedBand:
    poses = tuple(
        Pose2(values[4 * k], values[4 * k + 1], values[4 * k + 2])
        for k in range(values.size // 4)
    )
    return TimedBand(start, poses, tuple(values[3::4]))
