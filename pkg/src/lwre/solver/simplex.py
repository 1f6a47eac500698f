"""Dense bounded-variable primal simplex.

The model is brought to ``min c z  s.t.  A z = b,  0 <= z <= u`` (``u`` may be
infinite) by shifting finite lower bounds, mirroring variables that only
have an upper bound, splitting free variables and adding one slack per
inequality row.  Phase I minimizes the sum of artificials; phase II the
true objective.  Pricing is Dantzig's rule; after a run of degenerate
pivots without objective progress it falls back to Bland's rule until the
objective moves again.  The ratio test is Harris' two-pass test.

This engine keeps a full tableau, so it suits models up to a few thousand
rows and columns.  Larger relaxations go through :mod:`lwre.solver.highs_lp`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model import MilpModel

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-9
STALL_LIMIT = 50


@dataclass
class LpSolution:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    iterations: int = 0
    dual_objective: float = math.nan
    nodes: int = 0
    bound: float = math.nan
    gap: float = math.nan
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class _Standard:
    """Bookkeeping for the map between model variables and standard columns."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    u: np.ndarray
    const: float
    # model var j -> list of (column, sign, offset): x_j = offset + sum sign * z_col
    cols: list[list[tuple[int, float]]]
    offsets: np.ndarray


def _standardize(c_model, A_rows, senses, rhs, lb, ub) -> _Standard:
    m, n = A_rows.shape
    col_c: list[float] = []
    col_u: list[float] = []
    col_a: list[np.ndarray] = []
    cols: list[list[tuple[int, float]]] = []
    offsets = np.zeros(n)
    for j in range(n):
        a = A_rows[:, j]
        if np.isfinite(lb[j]):
            offsets[j] = lb[j]
            cols.append([(len(col_c), 1.0)])
            col_c.append(c_model[j])
            col_u.append(ub[j] - lb[j])
            col_a.append(a)
        elif np.isfinite(ub[j]):
            offsets[j] = ub[j]
            cols.append([(len(col_c), -1.0)])
            col_c.append(-c_model[j])
            col_u.append(math.inf)
            col_a.append(-a)
        else:
            cols.append([(len(col_c), 1.0), (len(col_c) + 1, -1.0)])
            col_c.extend([c_model[j], -c_model[j]])
            col_u.extend([math.inf, math.inf])
            col_a.extend([a, -a])
    b = np.asarray(rhs, dtype=float) - A_rows @ offsets
    for i, s in enumerate(senses):
        if s == "<=":
            e = np.zeros(m)
            e[i] = 1.0
        elif s == ">=":
            e = np.zeros(m)
            e[i] = -1.0
        else:
            continue
        col_c.append(0.0)
        col_u.append(math.inf)
        col_a.append(e)
    A = np.column_stack(col_a) if col_a else np.zeros((m, 0))
    const = float(np.dot(c_model, offsets))
    return _Standard(np.array(col_c), A, b, np.array(col_u), const, cols, offsets)


class _Tableau:
    def __init__(self, A: np.ndarray, b: np.ndarray, u: np.ndarray):
        m, n = A.shape
        self.m, self.n = m, n
        self.sign = np.where(b < 0, -1.0, 1.0)
        A = A * self.sign[:, None]
        b = b * self.sign
        # columns: structural 0..n-1, artificial n..n+m-1
        self.T = np.hstack([A, np.eye(m)])
        self.u = np.concatenate([u, np.full(m, math.inf)])
        self.basis = np.arange(n, n + m)
        self.b = b.astype(float).copy()
        self.xb = self.b.copy()
        self.at_upper = np.zeros(n + m, dtype=bool)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[self.basis] = True
        self.iterations = 0

    def recompute(self) -> None:
        """Refresh basic values from ``B^-1 (b - N z_N)``."""
        z = self.nonbasic_values()
        z[self.basis] = 0.0
        binv = self.T[:, self.n:]
        self.xb = binv @ self.b - self.T @ z

    def nonbasic_values(self) -> np.ndarray:
        z = np.zeros(self.n + self.m)
        z[self.at_upper] = self.u[self.at_upper]
        return z

    def values(self) -> np.ndarray:
        z = self.nonbasic_values()
        z[self.basis] = self.xb
        return z

    def run(self, cost: np.ndarray, max_iter: int) -> str:
        """Optimize ``cost`` from the current basis; returns optimal|unbounded|limit."""
        T = self.T
        d = cost - cost[self.basis] @ T
        best = math.inf
        stall = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                return "limit"
            obj = float(cost[self.basis] @ self.xb + cost[self.at_upper] @ self.u[self.at_upper])
            if obj < best - 1e-12 * max(1.0, abs(best) if np.isfinite(best) else 1.0):
                best = obj
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > STALL_LIMIT:
                    bland = True
            movable = (~self.is_basic) & (self.u > 0)
            elig = movable & (((~self.at_upper) & (d < -OPT_TOL)) | (self.at_upper & (d > OPT_TOL)))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return "optimal"
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            s = -1.0 if self.at_upper[j] else 1.0
            col = T[:, j]
            delta = s * col  # basic values move by -t * delta
            ub_b = self.u[self.basis]
            # pass 1 (relaxed ratios)
            dec = delta > PIVOT_TOL
            inc = (delta < -PIVOT_TOL) & np.isfinite(ub_b)
            r1 = np.full(self.m, math.inf)
            r1[dec] = (self.xb[dec] + HARRIS_TOL) / delta[dec]
            r1[inc] = (ub_b[inc] - self.xb[inc] + HARRIS_TOL) / (-delta[inc])
            t_relax = r1.min() if self.m else math.inf
            if not np.isfinite(t_relax) and not np.isfinite(self.u[j]):
                return "unbounded"
            if self.u[j] <= t_relax:
                # bound flip of the entering variable
                t = self.u[j]
                self.xb -= t * delta
                self.at_upper[j] = not self.at_upper[j]
                self.iterations += 1
                continue
            # pass 2: among exact ratios within the relaxed step pick the largest pivot
            exact = np.full(self.m, math.inf)
            exact[dec] = self.xb[dec] / delta[dec]
            exact[inc] = (ub_b[inc] - self.xb[inc]) / (-delta[inc])
            ok = np.flatnonzero(exact <= t_relax)
            if bland:
                tmin = exact[ok].min()
                ties = ok[exact[ok] <= tmin + 1e-12]
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ok[np.argmax(np.abs(delta[ok]))])
            t = max(exact[r], 0.0)
            leaving = self.basis[r]
            to_upper = delta[r] < 0
            self.xb -= t * delta
            entering_value = (self.u[j] if self.at_upper[j] else 0.0) + s * t
            # pivot
            piv = T[r, j]
            T[r] /= piv
            others = np.flatnonzero(np.abs(col) > 0)
            others = others[others != r]
            if others.size:
                T[others] -= np.outer(col[others], T[r])
            d = d - d[j] * T[r]
            self.xb[r] = entering_value
            self.basis[r] = j
            self.is_basic[j] = True
            self.is_basic[leaving] = False
            self.at_upper[j] = False
            self.at_upper[leaving] = bool(to_upper) and np.isfinite(self.u[leaving])
            self.iterations += 1


def solve_standard(c: np.ndarray, A: np.ndarray, b: np.ndarray, u: np.ndarray,
                   max_iter: int = 100000):
    """``min c z, A z = b, 0 <= z <= u``.  Returns ``(status, z, y, tableau)``."""
    m, n = A.shape
    tab = _Tableau(A, b, u)
    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    status = tab.run(cost1, max_iter)
    if status == "limit":
        return "limit", None, None, tab
    infeas = float(tab.values()[n:].sum())
    if infeas > FEAS_TOL * max(1.0, float(np.abs(b).max()) if m else 1.0):
        return "infeasible", None, None, tab
    # drive artificials out of the basis where possible, then pin them at zero
    for r in range(m):
        if tab.basis[r] >= n:
            row = tab.T[r, :n]
            cand = np.flatnonzero((np.abs(row) > 1e-9) & ~tab.is_basic[:n])
            if cand.size:
                j = int(cand[np.argmax(np.abs(row[cand]))])
                col = tab.T[:, j].copy()
                tab.T[r] /= tab.T[r, j]
                others = np.flatnonzero(np.abs(col) > 0)
                others = others[others != r]
                tab.T[others] -= np.outer(col[others], tab.T[r])
                leaving = tab.basis[r]
                tab.basis[r] = j
                tab.is_basic[j] = True
                tab.is_basic[leaving] = False
                tab.at_upper[j] = False
                tab.at_upper[leaving] = False
        tab.recompute()
    tab.u[n:] = 0.0
    tab.at_upper[n:] = False
    cost2 = np.concatenate([c, np.zeros(m)])
    status = tab.run(cost2, max_iter)
    if status != "optimal":
        return status, None, None, tab
    z = tab.values()[:n]
    binv = tab.T[:, n:]
    y = (cost2[tab.basis] @ binv) * tab.sign
    return "optimal", z, y, tab


def solve_lp_arrays(c_model, A_rows, senses, rhs, lb, ub, max_iter: int = 100000) -> LpSolution:
    """Solve ``min c x`` over rows ``A x (sense) rhs`` and bounds; dense inputs."""
    A_rows = np.asarray(A_rows, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub + FEAS_TOL):
        return LpSolution("infeasible", message="crossed bounds")
    std = _standardize(np.asarray(c_model, dtype=float), A_rows, senses, rhs, lb, ub)
    status, z, y, tab = solve_standard(std.c, std.A, std.b, std.u, max_iter)
    if status != "optimal":
        return LpSolution(status, iterations=tab.iterations)
    x = std.offsets.copy()
    for j, parts in enumerate(std.cols):
        for col, sign in parts:
            x[j] += sign * z[col]
    obj = float(np.dot(c_model, x))
    # dual objective: b'y + sum over columns at upper bound of reduced cost * u
    red = std.c - y @ std.A
    at_up = np.isfinite(std.u) & (z >= std.u - FEAS_TOL) & (red < 0)
    dual_obj = float(std.b @ y + red[at_up] @ std.u[at_up] + std.const)
    return LpSolution("optimal", obj, x, y, tab.iterations, dual_obj)


def solve_lp(model: MilpModel, max_iter: int = 100000) -> LpSolution:
    """Solve the LP relaxation of ``model`` with the dense simplex.

    ``objective`` and ``duals`` are reported in the model's own sense: for a
    maximization the duals are the sensitivities of the maximum to each
    right-hand side.
    """
    n, m = model.n_vars, model.n_rows
    A = np.zeros((m, n))
    for k, row in enumerate(model.rows):
        for i, v in row.coeffs.items():
            A[k, i] = v
    c = np.zeros(n)
    for i, v in model.objective.items():
        c[i] = v
    sign = -1.0 if model.sense == "max" else 1.0
    lb = np.array([v.lb for v in model.variables], dtype=float)
    ub = np.array([v.ub for v in model.variables], dtype=float)
    sol = solve_lp_arrays(sign * c, A, [r.sense for r in model.rows],
                          [r.rhs for r in model.rows], lb, ub, max_iter)
    if sol.status == "optimal":
        sol.objective = sign * sol.objective + model.objective_constant
        sol.dual_objective = sign * sol.dual_objective + model.objective_constant
        sol.duals = sign * sol.duals
    return sol
