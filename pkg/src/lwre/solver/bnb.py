"""Best-first branch-and-bound over LP relaxations.

Nodes are kept in a heap keyed by their relaxation bound, so the open node
with the best bound is expanded next.  Branching picks the most fractional
integer variable (ties go to the lowest index), optionally restricted to
the highest priority class that still has fractional members.  A node is
pruned when its bound cannot beat the incumbent by more than the relative
gap tolerance.

Two hooks let callers bring problem knowledge without touching the search:
``incumbent`` seeds the search with a known feasible point, and
``heuristic(x_lp)`` may turn a fractional relaxation into a feasible point.
Every point offered by either hook is checked against the model before it
is accepted.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigurationError
from ..model import MilpModel
from .simplex import LpSolution, solve_lp_arrays

DENSE_LIMIT = 40_000  # rows * columns above which "auto" switches to HiGHS


@dataclass
class BnbConfig:
    gap: float = 1e-6
    node_limit: int = 1_000_000
    time_limit: float = math.inf
    int_tol: float = 1e-6
    engine: str = "auto"
    branching: str = "most-fractional"
    search: str = "best-first"
    priorities: dict[int, int] | None = None
    heuristic_every: int = 50

    def __post_init__(self) -> None:
        if self.gap < 0:
            raise ConfigurationError("gap tolerance must be nonnegative")
        if self.engine not in ("auto", "dense", "highs"):
            raise ConfigurationError(f"unknown LP engine {self.engine!r}")
        if self.branching != "most-fractional" or self.search != "best-first":
            raise ConfigurationError("only most-fractional branching with best-first search")


class _DenseEngine:
    def __init__(self, model: MilpModel, c: np.ndarray):
        self.c = c
        self.A = np.zeros((model.n_rows, model.n_vars))
        for k, row in enumerate(model.rows):
            for i, v in row.coeffs.items():
                self.A[k, i] = v
        self.senses = [r.sense for r in model.rows]
        self.rhs = [r.rhs for r in model.rows]

    def solve(self, lb, ub):
        sol = solve_lp_arrays(self.c, self.A, self.senses, self.rhs, lb, ub)
        if sol.status == "optimal":
            return "optimal", sol.objective, sol.x
        return sol.status, math.inf if sol.status == "infeasible" else -math.inf, None


def make_engine(model: MilpModel, engine: str = "auto"):
    c, a, lo, hi, lb, ub, _ = model.to_arrays()
    if engine == "auto":
        engine = "dense" if model.n_rows * model.n_vars <= DENSE_LIMIT else "highs"
    if engine == "dense":
        return _DenseEngine(model, c)
    from .highs_lp import HighsEngine

    return HighsEngine(c, a, lo, hi, lb, ub)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


def _relative_gap(incumbent: float, bound: float) -> float:
    """Gap between a minimization incumbent and a lower bound."""
    if not math.isfinite(incumbent):
        return math.inf
    if not math.isfinite(bound):
        return math.inf if bound < incumbent else 0.0
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def _pick_branch(x, int_idx, tol, priority):
    frac = x[int_idx] - np.floor(x[int_idx])
    dist = np.minimum(frac, 1.0 - frac)
    cand = dist > tol
    if not cand.any():
        return None
    if priority is not None:
        top = priority[cand].max()
        cand &= priority == top
    score = np.where(cand, dist, -1.0)
    return int(int_idx[int(np.argmax(score))])  # argmax returns the first maximum


def solve_milp(
    model: MilpModel,
    config: BnbConfig | None = None,
    incumbent: np.ndarray | None = None,
    heuristic: Callable[[np.ndarray], np.ndarray | None] | None = None,
    log: Callable[[str], None] | None = None,
    fixed: dict[int, float] | None = None,
) -> LpSolution:
    """Maximize or minimize ``model`` by branch-and-bound.

    Status is ``optimal`` when the gap is closed to tolerance,
    ``infeasible`` when the tree is exhausted without a feasible point,
    ``unbounded`` when the root relaxation is unbounded, and ``limit`` when
    the node or time limit stops the search (with or without an incumbent).
    ``nodes`` counts solved relaxations and ``extra['branched']`` the nodes
    that were split.  ``fixed`` pins variables to values for this solve
    without copying the model.
    """
    config = config or BnbConfig()
    model.validate()
    start = time.perf_counter()
    sign = -1.0 if model.sense == "max" else 1.0
    c, _, _, _, lb0, ub0, integrality = model.to_arrays()
    int_idx = np.flatnonzero(integrality)
    lb0 = lb0.copy()
    ub0 = ub0.copy()
    lb0[int_idx] = np.ceil(lb0[int_idx] - config.int_tol)
    ub0[int_idx] = np.floor(ub0[int_idx] + config.int_tol)
    for i, val in (fixed or {}).items():
        lb0[i] = ub0[i] = float(val)
    priority = None
    if config.priorities:
        priority = np.array([config.priorities.get(int(i), 0) for i in int_idx])

    best_x: np.ndarray | None = None
    best = math.inf  # minimization value of the incumbent

    def offer(x: np.ndarray | None, origin: str) -> bool:
        nonlocal best_x, best
        if x is None:
            return False
        x = np.asarray(x, dtype=float).copy()
        x[int_idx] = np.round(x[int_idx])
        if np.any(x < lb0 - 1e-9) or np.any(x > ub0 + 1e-9) or model.max_violation(x) > 1e-6:
            return False
        val = float(c @ x)
        if val < best - 1e-12:
            best, best_x = val, x
            if log:
                log(f"incumbent {sign * val + model.objective_constant:.6f} from {origin}")
            return True
        return False

    if incumbent is not None:
        offer(incumbent, "start")

    engine = make_engine(model, config.engine)
    counter = itertools.count()
    nodes = 0
    branched = 0
    status = "optimal"

    root_status, root_val, root_x = engine.solve(lb0, ub0)
    nodes += 1
    if root_status == "unbounded":
        return LpSolution("unbounded", nodes=nodes, extra={"branched": 0})
    heap: list[_Node] = []
    if root_status == "optimal":
        heapq.heappush(heap, _Node(root_val, next(counter), lb0, ub0))
    xs: dict[int, np.ndarray] = {0: root_x} if root_status == "optimal" else {}

    while heap:
        node = heapq.heappop(heap)
        if _relative_gap(best, node.bound) <= config.gap:
            heap.clear()
            break
        if nodes >= config.node_limit or time.perf_counter() - start > config.time_limit:
            heapq.heappush(heap, node)
            status = "limit"
            break
        x = xs.pop(node.seq)
        j = _pick_branch(x, int_idx, config.int_tol, priority)
        if j is None:
            offer(x, "relaxation")
            continue
        if heuristic is not None and (branched % config.heuristic_every == 0):
            offer(heuristic(x), "heuristic")
            if _relative_gap(best, node.bound) <= config.gap:
                heap.clear()
                break
        branched += 1
        for lo_val, hi_val in ((math.floor(x[j]) + 1.0, ub0[j]), (lb0[j], math.floor(x[j]))):
            lb = node.lb.copy()
            ub = node.ub.copy()
            lb[j] = max(lb[j], lo_val)
            ub[j] = min(ub[j], hi_val)
            if lb[j] > ub[j]:
                continue
            st, val, xc = engine.solve(lb, ub)
            nodes += 1
            if st != "optimal":
                continue
            if _relative_gap(best, val) <= config.gap:
                if _pick_branch(xc, int_idx, config.int_tol, priority) is None:
                    offer(xc, "relaxation")
                continue
            if _pick_branch(xc, int_idx, config.int_tol, priority) is None:
                offer(xc, "relaxation")
                continue
            seq = next(counter)
            xs[seq] = xc
            heapq.heappush(heap, _Node(val, seq, lb, ub, node.depth + 1))

    open_bound = min((n.bound for n in heap), default=math.inf)
    if status == "limit":
        bound = min(open_bound, best)
    else:
        bound = best if best_x is not None else math.inf
    elapsed = time.perf_counter() - start
    extra = {"branched": branched, "time": elapsed, "open": len(heap)}
    if best_x is None:
        st = "limit" if status == "limit" else "infeasible"
        out_bound = sign * bound + model.objective_constant if math.isfinite(bound) else math.nan
        return LpSolution(st, nodes=nodes, bound=out_bound, extra=extra,
                          message="no feasible point found" if st == "limit" else "")
    gap = _relative_gap(best, bound)
    return LpSolution(
        status,
        sign * best + model.objective_constant,
        best_x,
        nodes=nodes,
        bound=sign * bound + model.objective_constant,
        gap=gap,
        extra=extra,
    )
