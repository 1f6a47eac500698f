"""Simulation-driven search for good signal plans and their MILP completion.

Because every minimum in the signal MILP is exact, a signal plan fixes all
flows, so a plan can be scored by running :func:`ltm_simulate` instead of
solving anything.  The search below starts from the best fixed-time plans,
then improves by local moves that turn a block of consecutive steps of one
junction over to another approach.  Emission caps registered on the model
are scored with the exact worst case over their uncertainty sets and enter
the score as a relative-excess penalty.

:func:`complete_plan` turns a plan into a full MILP point: simulated
flows and counts give every regime and min-selection binary, and the
remaining continuous variables (dual multipliers of robust rows) come from
one relaxation with all those binaries fixed.  The result is a verified
incumbent for :func:`lwre.solver.bnb.solve_milp`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lwr_core import SignalPlan, SimulationResult, ltm_simulate
from .robust_milp import SignalMilp
from .solver.bnb import BnbConfig, solve_milp
from .uncertainty import worst_case_emission


@dataclass
class PlanSearchConfig:
    seed: int = 0
    max_evals: int = 20000
    time_limit: float = 600.0
    penalty: float = 100.0
    block_sizes: tuple[int, ...] = (1, 2, 3, 4, 6)
    green_range: tuple[int, int] = (1, 8)
    kicks: int = 4


class PlanEvaluator:
    """Incremental re-simulation of one network under changing signal plans.

    Repeats the stepping of :func:`ltm_simulate` on plain Python floats and
    keeps the state of the last evaluated plan, so a plan that differs only
    from step ``s`` on is re-simulated from ``s``.  The search calls this
    tens of thousands of times; results agree with :func:`ltm_simulate`.
    """

    def __init__(self, sm: SignalMilp):
        net = sm.network
        self.sm = sm
        self.n = sm.horizon
        self.dt = net.dt
        self.ids = list(net.links)
        pos = {lid: i for i, lid in enumerate(self.ids)}
        links = [net.links[lid] for lid in self.ids]
        self.cap = [l.capacity for l in links]
        self.storage = [l.storage for l in links]
        self.df = [l.delta_f for l in links]
        self.db = [l.delta_b for l in links]
        self.sources = [(pos[lid], [max(float(v), 0.0) for v in sm.demands[lid]])
                        for lid in net.sources]
        self.sinks = [pos[lid] for lid in net.sinks]
        self.junctions = []
        for jn in net.junctions:
            rows = []
            for i, lin in enumerate(jn.incoming):
                outs = [(pos[lout], float(jn.turning[i, j])) for j, lout in enumerate(jn.outgoing)]
                rows.append((pos[lin], outs))
            self.junctions.append((jn.id if jn.signalized else None, rows,
                                   [pos[l] for l in jn.outgoing]))
        nl = len(links)
        self.up = [[0.0] * (self.n + 1) for _ in range(nl)]
        self.down = [[0.0] * (self.n + 1) for _ in range(nl)]
        self.q_out = [[0.0] * self.n for _ in range(nl)]
        self.valid = 0  # steps 1..valid hold the state of the stored plan
        self.weights = [1.0 / (1 + k) for k in range(1, self.n + 1)]
        self.obj_links = [pos[lid] for lid in sm.objective_links]
        self.cap_links = [(pos[link], uset, cap, scale)
                          for link, uset, cap, scale in sm.cap_checks]

    def evaluate(self, green: dict[str, list[int]], changed_from: int = 1) -> None:
        """Simulate with ``green[junction][k - 1]`` the green approach of step ``k``."""
        dt, cap, storage, df, db = self.dt, self.cap, self.storage, self.df, self.db
        up, down, q_out = self.up, self.down, self.q_out
        nl = len(cap)
        start = max(1, min(self.valid + 1, changed_from))
        for k in range(start, self.n + 1):
            supply = [0.0] * nl
            demand = [0.0] * nl
            for l in range(nl):
                u_l, d_l = up[l], down[l]
                m = k - db[l]
                space = (d_l[m] if m >= 0 else 0.0) + storage[l] - u_l[k - 1]
                supply[l] = min(cap[l], max(space, 0.0) / dt)
                m = k - df[l]
                avail = (u_l[m] if m >= 0 else 0.0) - d_l[k - 1]
                demand[l] = min(cap[l], max(avail, 0.0) / dt)
            q_in = [0.0] * nl
            for l, prof in self.sources:
                q_in[l] = min(prof[k - 1], supply[l])
            for sig, rows, outs in self.junctions:
                g = green[sig][k - 1] if sig is not None else -1
                for l in outs:
                    q_in[l] = 0.0
                for i, (lin, turn) in enumerate(rows):
                    if sig is not None and i != g:
                        q_out[lin][k - 1] = 0.0
                        continue
                    q = demand[lin]
                    for lout, a in turn:
                        if a > 0:
                            q = min(q, supply[lout] / a)
                    q_out[lin][k - 1] = q
                    for lout, a in turn:
                        q_in[lout] += a * q
            for l in self.sinks:
                q_out[l][k - 1] = demand[l]
            for l in range(nl):
                up[l][k] = up[l][k - 1] + dt * q_in[l]
                down[l][k] = down[l][k - 1] + dt * q_out[l][k - 1]
        self.valid = self.n

    def invalidate(self, from_step: int) -> None:
        self.valid = min(self.valid, from_step - 1)

    def throughput(self) -> float:
        w = self.weights
        return sum(sum(wk * q for wk, q in zip(w, self.q_out[l])) for l in self.obj_links)

    def cap_excess(self) -> float:
        total = 0.0
        for l, uset, cap, scale in self.cap_links:
            occ = np.subtract(self.up[l][1:], self.down[l][1:])
            worst = worst_case_emission(uset, occ, self.dt, scale)
            total += max(0.0, worst - cap) / cap
        return total


def green_lists(sm: SignalMilp, plan: SignalPlan) -> dict[str, list[int]]:
    return {jn.id: [int(v) for v in np.argmax(plan.controls[jn.id], axis=0)]
            for jn in sm.network.signalized}


def plan_from_green(sm: SignalMilp, green: dict[str, list[int]]) -> SignalPlan:
    controls = {}
    for jn in sm.network.signalized:
        u = np.zeros((len(jn.incoming), sm.horizon), dtype=int)
        u[np.asarray(green[jn.id]), np.arange(sm.horizon)] = 1
        controls[jn.id] = u
    return SignalPlan(controls)


def simulate_plan(sm: SignalMilp, plan: SignalPlan) -> SimulationResult:
    return ltm_simulate(sm.network, plan, sm.demands, sm.horizon, eps=sm.bigm.eps)


def plan_throughput(sm: SignalMilp, sim: SimulationResult) -> float:
    weights = 1.0 / (2.0 + np.arange(sm.horizon))
    return float(sum(weights @ sim.q_out[lid] for lid in sm.objective_links))


def cap_excess(sm: SignalMilp, sim: SimulationResult) -> float:
    """Sum of relative worst-case excesses over the registered caps (0 when all hold)."""
    total = 0.0
    for link, uset, cap, scale in sm.cap_checks:
        worst = worst_case_emission(uset, sim.occupancy(link)[1:], sm.dt, scale)
        total += max(0.0, worst - cap) / cap
    return total


def complete_plan(sm: SignalMilp, plan: SignalPlan, time_limit: float = 120.0):
    """Full MILP point realizing ``plan``, or ``None`` when the plan violates the model."""
    sim = simulate_plan(sm, plan)
    model = sm.model
    x = np.zeros(model.n_vars)
    for lid, link in sm.network.links.items():
        curves = sim.curves[lid]
        for k in range(1, sm.horizon + 1):
            x[sm.var("qin", lid, k)] = sim.q_in[lid][k - 1]
            x[sm.var("qout", lid, k)] = sim.q_out[lid][k - 1]
            x[sm.var("S", lid, k)] = sim.supply[lid][k - 1]
            x[sm.var("D", lid, k)] = sim.demand[lid][k - 1]
            x[sm.var("U", lid, k)] = curves.n_up[k]
            x[sm.var("W", lid, k)] = curves.n_down[k]
    fixed: dict[int, float] = {}
    for y, expr, thr, sense in sm.phases:
        val = expr.value(x)
        fixed[y] = float(val <= thr if sense == "<=" else val >= thr)
    for jn in sm.network.signalized:
        u = plan.controls[jn.id]
        for i in range(len(jn.incoming)):
            for k in range(1, sm.horizon + 1):
                fixed[sm.var("u", f"{jn.id}:{i}", k)] = float(u[i, k - 1])
    for y, target, a, b in sm.selectors:
        va, vb = a.value(x), b.value(x)
        fixed[y] = float(vb < va)
        x[target] = min(va, vb)
    for idx, val in fixed.items():
        x[idx] = val
    if model.n_vars == len(fixed) + _n_core(sm) and model.max_violation(x) <= 1e-7:
        return x
    sol = solve_milp(model, BnbConfig(engine="highs", time_limit=time_limit), fixed=fixed)
    return sol.x if sol.x is not None and sol.status in ("optimal", "limit") else None


def _n_core(sm: SignalMilp) -> int:
    """Number of continuous variables set directly from a simulation."""
    core = {"qin", "qout", "S", "D", "U", "W", "zeta", "beta"}
    return sum(1 for (fam, _, _) in sm.vars if fam in core)


class SignalPlanSearch:
    """Fixed-time scan followed by seeded iterated local search over block moves."""

    def __init__(self, sm: SignalMilp, config: PlanSearchConfig | None = None):
        self.sm = sm
        self.config = config or PlanSearchConfig()
        self.rng = np.random.default_rng(self.config.seed)
        self.ev = PlanEvaluator(sm)
        self.signals = [(jn.id, len(jn.incoming)) for jn in sm.network.signalized]
        self.evals = 0
        self._start = time.perf_counter()
        self.best_green: dict[str, list[int]] | None = None
        self.best_score = -np.inf
        # best plan meeting every registered cap, kept apart from the penalized optimum
        self.feasible_green: dict[str, list[int]] | None = None
        self.feasible_score = -np.inf

    # -- scoring ----------------------------------------------------------
    def score_green(self, green: dict[str, list[int]], changed_from: int = 1) -> float:
        self.evals += 1
        self.ev.invalidate(changed_from)
        self.ev.evaluate(green, changed_from)
        thr, exc = self.ev.throughput(), self.ev.cap_excess()
        if exc <= 0 and thr > self.feasible_score + 1e-12:
            self.feasible_score = thr
            self.feasible_green = {k: list(v) for k, v in green.items()}
        return thr - self.config.penalty * exc

    def score(self, plan: SignalPlan) -> tuple[float, float, float]:
        """``(penalized score, throughput, relative cap excess)`` of a plan."""
        self.score_green(green_lists(self.sm, plan))
        thr, exc = self.ev.throughput(), self.ev.cap_excess()
        return thr - self.config.penalty * exc, thr, exc

    def _budget_left(self) -> bool:
        return (self.evals < self.config.max_evals
                and time.perf_counter() - self._start < self.config.time_limit)

    def _consider(self, green: dict[str, list[int]], value: float) -> None:
        if value > self.best_score + 1e-12:
            self.best_score = value
            self.best_green = {k: list(v) for k, v in green.items()}

    @property
    def best_plan(self) -> SignalPlan | None:
        return None if self.best_green is None else plan_from_green(self.sm, self.best_green)

    @property
    def feasible_plan(self) -> SignalPlan | None:
        """Highest-throughput plan seen that meets every cap, or ``None``."""
        return None if self.feasible_green is None else plan_from_green(self.sm, self.feasible_green)

    # -- fixed-time scan --------------------------------------------------
    def cyclic_green(self, params: dict[str, tuple[tuple[int, ...], int]]) -> dict[str, list[int]]:
        """Cycle through approaches with green lengths ``greens``, shifted by ``offset``."""
        out = {}
        for jid, n_app in self.signals:
            greens, offset = params[jid]
            cycle = np.repeat(np.arange(n_app), greens)
            seq = cycle[(np.arange(self.sm.horizon) + offset) % len(cycle)]
            out[jid] = [int(v) for v in seq]
        return out

    def fixed_time_scan(self, rounds: int = 2) -> None:
        """Coordinate search over per-junction green lengths and offsets."""
        lo, hi = self.config.green_range
        params = {jid: ((3,) * n_app, 0) for jid, n_app in self.signals}
        green = self.cyclic_green(params)
        best = self.score_green(green)
        self._consider(green, best)
        for _ in range(rounds):
            improved = False
            for jid, n_app in self.signals:
                for greens in _green_grid(n_app, lo, hi):
                    for offset in range(sum(greens)):
                        if not self._budget_left():
                            return
                        trial = dict(params)
                        trial[jid] = (greens, offset)
                        green = self.cyclic_green(trial)
                        value = self.score_green(green)
                        if value > best + 1e-12:
                            best, params, improved = value, trial, True
                            self._consider(green, value)
            if not improved:
                break

    # -- local search -----------------------------------------------------
    def local_search(self, green: dict[str, list[int]]) -> float:
        """First-improvement descent over block reassignments; returns the final score."""
        green = {k: list(v) for k, v in green.items()}
        current = self.score_green(green)
        self._consider(green, current)
        n = self.sm.horizon
        improved = True
        while improved and self._budget_left():
            improved = False
            for size in self.config.block_sizes:
                for start in range(n - size + 1):
                    for jid, n_app in self.signals:
                        seq = green[jid]
                        saved = seq[start:start + size]
                        for target in range(n_app):
                            if all(v == target for v in saved):
                                continue
                            if not self._budget_left():
                                self.score_green(green)
                                return current
                            seq[start:start + size] = [target] * size
                            value = self.score_green(green, start + 1)
                            if value > current + 1e-12:
                                current, improved = value, True
                                self._consider(green, value)
                                saved = seq[start:start + size]
                            else:
                                seq[start:start + size] = saved
                                self.ev.invalidate(start + 1)
        return current

    def kick(self, green: dict[str, list[int]], n_moves: int = 6) -> dict[str, list[int]]:
        """Random block reassignments used to restart the local search."""
        green = {k: list(v) for k, v in green.items()}
        n = self.sm.horizon
        for _ in range(n_moves):
            jid, n_app = self.signals[int(self.rng.integers(len(self.signals)))]
            size = int(self.rng.integers(1, 7))
            start = int(self.rng.integers(0, max(1, n - size + 1)))
            green[jid][start:start + size] = [int(self.rng.integers(n_app))] * size
        return green

    def run(self, starts: list[SignalPlan] | None = None) -> tuple[SignalPlan, float]:
        """Best plan found and its penalized score."""
        if not self.signals:
            self._consider({}, self.score_green({}))
            return SignalPlan(), self.best_score
        for plan in starts or []:
            green = green_lists(self.sm, plan)
            self._consider(green, self.score_green(green))
        self.fixed_time_scan()
        self.local_search(self.best_green)
        for _ in range(self.config.kicks):
            if not self._budget_left():
                break
            self.local_search(self.kick(self.best_green))
        return self.best_plan, self.best_score


def _green_grid(n_app: int, lo: int, hi: int):
    grids = np.meshgrid(*[np.arange(lo, hi + 1)] * n_app, indexing="ij")
    for combo in zip(*(g.ravel() for g in grids)):
        yield tuple(int(v) for v in combo)


def _copy(plan: SignalPlan) -> SignalPlan:
    return SignalPlan({k: np.array(v, copy=True) for k, v in plan.controls.items()})
