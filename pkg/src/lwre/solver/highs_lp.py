"""LP relaxations through the HiGHS dual simplex.

The dense tableau in :mod:`lwre.solver.simplex` is exact and auditable but
quadratic in memory, so network-scale relaxations (thousands of rows) are
handed to HiGHS.  Only its LP simplex is used; branching, bounding and the
incumbent logic stay in :mod:`lwre.solver.bnb`.  The engine keeps one HiGHS
instance per branch-and-bound run and changes column bounds between nodes,
so each node starts from the basis of the previous one.
"""

from __future__ import annotations

import math

import highspy
import numpy as np

from ..model import MilpModel
from .simplex import LpSolution


def _load(h: highspy.Highs, c, a, lo, hi, lb, ub) -> None:
    lp = highspy.HighsLp()
    n = len(c)
    m = a.shape[0]
    inf = highspy.kHighsInf
    lp.num_col_ = n
    lp.num_row_ = m
    lp.col_cost_ = np.asarray(c, dtype=float)
    lp.col_lower_ = np.where(np.isfinite(lb), lb, -inf)
    lp.col_upper_ = np.where(np.isfinite(ub), ub, inf)
    lp.row_lower_ = np.where(np.isfinite(lo), lo, -inf)
    lp.row_upper_ = np.where(np.isfinite(hi), hi, inf)
    csc = a.tocsc()
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = csc.indptr.astype(np.int32)
    lp.a_matrix_.index_ = csc.indices.astype(np.int32)
    lp.a_matrix_.value_ = csc.data.astype(float)
    lp.a_matrix_.num_col_ = n
    lp.a_matrix_.num_row_ = m
    h.passModel(lp)


class HighsEngine:
    """Minimization LP ``min c x, lo <= A x <= hi, lb <= x <= ub`` with mutable bounds."""

    def __init__(self, c, a, lo, hi, lb, ub, threads: int = 1):
        self.h = highspy.Highs()
        self.h.silent()
        self.h.setOptionValue("threads", threads)
        self.h.setOptionValue("solver", "simplex")
        self.h.setOptionValue("presolve", "off")
        _load(self.h, c, a, lo, hi, lb, ub)
        self.n = len(c)
        self._idx = np.arange(self.n, dtype=np.int32)

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> tuple[str, float, np.ndarray | None]:
        inf = highspy.kHighsInf
        self.h.changeColsBounds(
            self.n, self._idx,
            np.where(np.isfinite(lb), lb, -inf), np.where(np.isfinite(ub), ub, inf),
        )
        self.h.run()
        status = self.h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            sol = self.h.getSolution()
            return "optimal", self.h.getInfo().objective_function_value, np.array(sol.col_value)
        if status == highspy.HighsModelStatus.kInfeasible:
            return "infeasible", math.inf, None
        if status in (highspy.HighsModelStatus.kUnbounded,
                      highspy.HighsModelStatus.kUnboundedOrInfeasible):
            # distinguish with a clean solve: HiGHS may report either for an infeasible LP
            return "unbounded", -math.inf, None
        return "error", math.nan, None


def solve_lp_highs(model: MilpModel) -> LpSolution:
    """LP relaxation of ``model`` by HiGHS, reported in the model's sense with row duals."""
    c, a, lo, hi, lb, ub, _ = model.to_arrays()
    h = highspy.Highs()
    h.silent()
    h.setOptionValue("threads", 1)
    _load(h, c, a, lo, hi, lb, ub)
    h.run()
    status = h.getModelStatus()
    if status == highspy.HighsModelStatus.kInfeasible:
        return LpSolution("infeasible")
    if status in (highspy.HighsModelStatus.kUnbounded,
                  highspy.HighsModelStatus.kUnboundedOrInfeasible):
        return LpSolution("unbounded")
    if status != highspy.HighsModelStatus.kOptimal:
        return LpSolution("error", message=h.modelStatusToString(status))
    sol = h.getSolution()
    info = h.getInfo()
    sign = -1.0 if model.sense == "max" else 1.0
    obj = sign * info.objective_function_value + model.objective_constant
    duals = sign * np.array(sol.row_dual)
    return LpSolution("optimal", obj, np.array(sol.col_value), duals,
                      int(info.simplex_iteration_count), obj)
