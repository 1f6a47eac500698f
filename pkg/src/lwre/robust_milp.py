"""Signal-control MILP on a link-transmission network plus robust emission rows.

The dynamic core tracks cumulative counts ``U[l,k] = N_up(t^k)`` and
``W[l,k] = N_down(t^k)`` of every link and encodes, per step ``k``:

* ``S = min(C, space / dt)`` with ``space = W[k - delta_b] + rho_jam L - U[k-1]``
  and ``D = min(C, avail / dt)`` with ``avail = U[k - delta_f] - W[k-1]``,
  each as an exact minimum selected by a regime binary (``rup`` / ``rdown``);
* at every junction ``zeta_i = min(D_i, min_j S_j / alpha_ij)`` as a chain of
  exact pairwise minima, gated by the green indicator ``u_i``;
* turning splits, one green per signalized junction, source inflow
  ``min(demand, S)`` and free sink discharge ``q_out = D``.

Because every minimum is exact, the flows are fully determined by the
signal plan and coincide with :func:`lwre.lwr_core.ltm_simulate`.

Robust emission rows replace a semi-infinite cap over a budget
uncertainty set by its LP dual.  All of them take the occupancy as a list
of affine expressions ``N_k`` and a step weight ``h = dt * time_scale``
(``time_scale = 1/3600`` turns g/h times seconds into grams).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ModelError, UncertaintySetError
from .lwr_core import Network, SignalPlan
from .model import BINARY, LinExpr, MilpModel
from .uncertainty import PiecewiseUncertaintySet, UncertaintySet

GRAMS_PER_GH_SECOND = 1.0 / 3600.0
_STEP_SUFFIX = re.compile(r",(\d+)\]$")


@dataclass(frozen=True)
class BigMConfig:
    """Big-M constant and strict-inequality threshold.

    With ``tighten`` (the default) every row uses the smallest constant
    valid for it, never more than ``M``.
    """

    M: float = 1e4
    eps: float = 1e-4
    tighten: bool = True

    def __post_init__(self) -> None:
        if self.M <= 0:
            raise ConfigurationError("M must be positive")
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive")

    @classmethod
    def for_network(cls, network: Network, horizon: int, eps: float = 1e-4) -> "BigMConfig":
        """Smallest global constant satisfying ``M >= rho_jam L_max + C_max T``."""
        storage = max(l.storage for l in network.links.values())
        cap = max(l.capacity for l in network.links.values())
        return cls(storage + cap * horizon * network.dt, eps)

    def validate(self, network: Network, horizon: int) -> None:
        need = BigMConfig.for_network(network, horizon).M
        if self.M < need * (1 - 1e-12):
            raise ConfigurationError(f"M = {self.M:g} below the validity bound {need:g}")
        c_min = min(l.capacity for l in network.links.values())
        if not 0 < self.eps < c_min * network.dt:
            raise ConfigurationError("eps must lie in (0, C_min * dt)")

    def m(self, tight: float) -> float:
        return min(self.M, max(tight, 0.0)) if self.tighten else self.M


@dataclass(frozen=True)
class EmissionCap:
    link: str
    E: float

    def __post_init__(self) -> None:
        if not self.E > 0:
            raise ConfigurationError(f"cap on link {self.link} must be positive")


@dataclass
class SignalMilp:
    """A built signal-control model together with its variable directory."""

    model: MilpModel
    network: Network
    horizon: int
    demands: dict[str, np.ndarray]
    bigm: BigMConfig
    objective_links: list[str]
    vars: dict[tuple[str, str, int], int] = field(default_factory=dict)
    throughput: dict[int, float] = field(default_factory=dict)
    caps: dict[str, float] = field(default_factory=dict)
    # (binary, target, a, b): binary is 1 exactly when the minimum picks b
    selectors: list[tuple[int, int, LinExpr, LinExpr]] = field(default_factory=list)
    # (binary, expr, threshold, sense): binary is 1 exactly when expr <= / >= threshold
    phases: list[tuple[int, LinExpr, float, str]] = field(default_factory=list)
    # worst-case cap checks on simulated occupancies: (link, set, cap, time_scale)
    cap_checks: list[tuple[str, UncertaintySet, float, float]] = field(default_factory=list)

    @property
    def dt(self) -> float:
        return self.network.dt

    def var(self, family: str, owner: str, k: int) -> int:
        return self.vars[(family, owner, k)]

    def count(self, link: str, side: str, k: int) -> LinExpr:
        """Cumulative count ``U`` (side ``'up'``) or ``W`` (``'down'``) at ``t^k``; zero for ``k <= 0``."""
        if k <= 0:
            return LinExpr()
        return LinExpr.var(self.vars[("U" if side == "up" else "W", link, k)])

    def occupancy(self, link: str, k: int) -> LinExpr:
        """``N_k = dt * (sum_{j<=k} q_in - sum_{j<=k} q_out)`` through the cumulative counts."""
        return self.count(link, "up", k) - self.count(link, "down", k)

    def occupancies(self, link: str) -> list[LinExpr]:
        return [self.occupancy(link, k) for k in range(1, self.horizon + 1)]

    def occupancy_bounds(self, link: str) -> tuple[float, float]:
        return 0.0, self.network.links[link].storage

    def signal_plan(self, x: np.ndarray) -> SignalPlan:
        controls = {}
        for jn in self.network.signalized:
            u = np.zeros((len(jn.incoming), self.horizon), dtype=int)
            for i in range(len(jn.incoming)):
                for k in range(1, self.horizon + 1):
                    u[i, k - 1] = int(round(x[self.var("u", f"{jn.id}:{i}", k)]))
            controls[jn.id] = u
        return SignalPlan(controls)

    def flows(self, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        q_in, q_out = {}, {}
        for lid in self.network.links:
            q_in[lid] = np.array([x[self.var("qin", lid, k)] for k in range(1, self.horizon + 1)])
            q_out[lid] = np.array([x[self.var("qout", lid, k)] for k in range(1, self.horizon + 1)])
        return q_in, q_out

    def throughput_value(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in self.throughput.items()))

    def branching_priorities(self) -> dict[int, int]:
        """Branch on binaries in time order, greens before regime binaries of the same step.

        Fixing early steps first lets the relaxation settle the traffic
        state step by step; on signal models this closes the gap far
        faster than most-fractional branching alone.
        """
        out = {}
        for i, v in enumerate(self.model.variables):
            if v.kind != BINARY:
                continue
            match = _STEP_SUFFIX.search(v.name)
            if match is None:
                continue
            k = int(match.group(1))
            out[i] = 2 * (self.horizon - k) + int(v.name.startswith("u["))
        return out


def _exact_min(
    model: MilpModel,
    target: int,
    a: LinExpr,
    ub_a: float,
    b: LinExpr,
    ub_b: float,
    binary_name: str,
    bigm: BigMConfig,
    tag: str,
    name: str,
    registry: list | None = None,
) -> int:
    """Rows making ``x[target] = min(a, b)`` for nonnegative ``a``, ``b``; returns the binary.

    ``y = 0`` selects ``a`` and ``y = 1`` selects ``b``.
    """
    y = model.add_var(binary_name, BINARY)
    if registry is not None:
        registry.append((y, target, a, b))
    t = LinExpr.var(target)
    model.add_row(t - a, "<=", 0.0, f"{name}.a_hi", tag)
    model.add_row(t - b, "<=", 0.0, f"{name}.b_hi", tag)
    model.add_row(t - a + LinExpr.var(y, bigm.m(ub_a)), ">=", 0.0, f"{name}.a_lo", tag)
    model.add_row(t - b - LinExpr.var(y, bigm.m(ub_b)), ">=", -bigm.m(ub_b), f"{name}.b_lo", tag)
    return y


def build_signal_milp(
    network: Network,
    horizon: int,
    bigm: BigMConfig | None = None,
    objective_links: Sequence[str] | None = None,
    boundary_demands: Mapping[str, Sequence[float]] | None = None,
    phase_rows: bool = True,
) -> SignalMilp:
    """Build the throughput-maximizing signal-control MILP.

    The objective is ``max sum_k 1/(1+k) sum_{l in objective_links} q_out[l,k]``
    (default: all sink links).  ``phase_rows`` adds the explicit regime
    threshold rows for ``rup`` / ``rdown``; the exact-min rows already imply
    them, so switching them off leaves the feasible set unchanged.
    """
    if horizon < 1:
        raise ModelError("horizon must be at least one step (empty model)")
    dt = network.dt
    bigm = bigm or BigMConfig.for_network(network, horizon)
    eps = bigm.eps
    sinks, sources = network.sinks, network.sources
    objective_links = list(objective_links) if objective_links is not None else list(sinks)
    for lid in objective_links:
        if lid not in network.links:
            raise ConfigurationError(f"unknown objective link {lid}")
    demands = {}
    boundary_demands = boundary_demands or {}
    for lid in sources:
        prof = np.asarray(boundary_demands.get(lid, np.zeros(horizon)), dtype=float)
        if len(prof) < horizon:
            raise ConfigurationError(f"demand profile for link {lid} shorter than horizon")
        demands[lid] = np.clip(prof[:horizon], 0.0, None)

    model = MilpModel(name="signal")
    sm = SignalMilp(model, network, horizon, demands, bigm, objective_links)
    V = sm.vars
    ids = list(network.links)

    # flow, supply/demand and cumulative-count variables
    for lid in ids:
        link = network.links[lid]
        cap = link.capacity
        for k in range(1, horizon + 1):
            for fam in ("qin", "qout", "S", "D"):
                V[(fam, lid, k)] = model.add_var(f"{fam}[{lid},{k}]", lb=0.0, ub=cap)
            for fam in ("U", "W"):
                V[(fam, lid, k)] = model.add_var(f"{fam}[{lid},{k}]", lb=0.0, ub=cap * dt * k)
            for fam in ("rup", "rdown"):
                V[(fam, lid, k)] = model.add_var(f"{fam}[{lid},{k}]", BINARY)

    for lid in ids:
        link = network.links[lid]
        cap, storage = link.capacity, link.storage
        cap_step = cap * dt
        for k in range(1, horizon + 1):
            tagk = f"{lid},{k}"
            # cumulative counts
            for fam, flow in (("U", "qin"), ("W", "qout")):
                expr = LinExpr.var(V[(fam, lid, k)]) - LinExpr.var(V[(flow, lid, k)], dt)
                if k > 1:
                    expr.add(V[(fam, lid, k - 1)], -1.0)
                model.add_row(expr, "=", 0.0, f"{fam}[{tagk}]", "cumulative")

            space = sm.count(lid, "down", k - link.delta_b) + storage - sm.count(lid, "up", k - 1)
            avail = sm.count(lid, "up", k - link.delta_f) - sm.count(lid, "down", k - 1)
            rup = LinExpr.var(V[("rup", lid, k)])
            rdown = LinExpr.var(V[("rdown", lid, k)])
            S = LinExpr.var(V[("S", lid, k)])
            D = LinExpr.var(V[("D", lid, k)])

            sm.phases.append((V[("rup", lid, k)], space, cap_step, "<="))
            sm.phases.append((V[("rdown", lid, k)], avail, cap_step, ">="))
            if phase_rows:
                # rup = 1  =>  space <= C dt + eps ;  rup = 0  =>  space >= C dt - eps
                m_hi = bigm.m(storage - cap_step)
                model.add_row(space + rup * m_hi, "<=", cap_step + eps + m_hi,
                              f"rup.hi[{tagk}]", "entry_phase")
                model.add_row(space + rup * bigm.m(cap_step), ">=", cap_step - eps,
                              f"rup.lo[{tagk}]", "entry_phase")
                # rdown = 1  =>  avail >= C dt - eps ;  rdown = 0  =>  avail <= C dt + eps
                model.add_row(avail - rdown * bigm.m(storage - cap_step), "<=", cap_step + eps,
                              f"rdown.hi[{tagk}]", "exit_phase")
                m_lo = bigm.m(cap_step)
                model.add_row(avail - rdown * m_lo, ">=", cap_step - eps - m_lo,
                              f"rdown.lo[{tagk}]", "exit_phase")

            # S = min(C, space/dt): rup = 0 -> C, rup = 1 -> space/dt
            model.add_row(S - space * (1.0 / dt), "<=", 0.0, f"S.space[{tagk}]", "supply")
            model.add_row(S + rup * bigm.m(cap), ">=", cap, f"S.cap[{tagk}]", "supply")
            m_s = bigm.m(storage / dt - cap)
            model.add_row(S - space * (1.0 / dt) - rup * m_s, ">=", -m_s,
                          f"S.min[{tagk}]", "supply")
            # D = min(C, avail/dt): rdown = 1 -> C, rdown = 0 -> avail/dt
            model.add_row(D - avail * (1.0 / dt), "<=", 0.0, f"D.avail[{tagk}]", "demand")
            m_d = bigm.m(cap)
            model.add_row(D - rdown * m_d, ">=", cap - m_d, f"D.cap[{tagk}]", "demand")
            model.add_row(D - avail * (1.0 / dt) + rdown * bigm.m(storage / dt - cap), ">=", 0.0,
                          f"D.min[{tagk}]", "demand")

    # boundary links
    for lid in sources:
        cap = network.links[lid].capacity
        for k in range(1, horizon + 1):
            d = float(demands[lid][k - 1])
            q = V[("qin", lid, k)]
            if d <= 0.0:
                model.add_row({q: 1.0}, "=", 0.0, f"src[{lid},{k}]", "source_inflow")
            elif d >= cap:
                model.add_row({q: 1.0, V[("S", lid, k)]: -1.0}, "=", 0.0,
                              f"src[{lid},{k}]", "source_inflow")
            else:
                V[("ysrc", lid, k)] = _exact_min(
                    model, q, LinExpr(constant=d), d, LinExpr.var(V[("S", lid, k)]), cap,
                    f"ysrc[{lid},{k}]", bigm, "source_inflow", f"src[{lid},{k}]", sm.selectors,
                )
    for lid in sinks:
        for k in range(1, horizon + 1):
            model.add_row({V[("qout", lid, k)]: 1.0, V[("D", lid, k)]: -1.0}, "=", 0.0,
                          f"sink[{lid},{k}]", "sink_outflow")

    # junctions
    for jn in network.junctions:
        alpha = jn.turning
        for k in range(1, horizon + 1):
            for i, lin in enumerate(jn.incoming):
                owner = f"{jn.id}:{i}"
                terms: list[tuple[LinExpr, float]] = []
                for j, lout in enumerate(jn.outgoing):
                    if alpha[i, j] > 0:
                        terms.append((LinExpr.var(V[("S", lout, k)], 1.0 / alpha[i, j]),
                                      network.links[lout].capacity / alpha[i, j]))
                if not terms:
                    raise ConfigurationError(f"junction {jn.id}: all-zero turning row")
                terms.append((LinExpr.var(V[("D", lin, k)]), network.links[lin].capacity))
                q_out = V[("qout", lin, k)]
                if jn.signalized:
                    final_ub = min(ub for _, ub in terms)
                    final = model.add_var(f"zeta[{owner},{k}]", lb=0.0, ub=final_ub)
                    V[("zeta", owner, k)] = final
                else:
                    final = q_out
                cur, cur_ub = terms[0]
                for t, (expr, ub) in enumerate(terms[1:], start=1):
                    last = t == len(terms) - 1
                    if last:
                        target = final
                        bname = f"eta[{owner},{k}]"
                    else:
                        target = model.add_var(f"beta[{owner},{t},{k}]", lb=0.0,
                                               ub=min(cur_ub, ub))
                        V[("beta", f"{owner}:{t}", k)] = target
                        bname = f"xi[{owner},{t},{k}]"
                    y = _exact_min(model, target, cur, cur_ub, expr, ub, bname, bigm,
                                   "junction_min", f"min[{owner},{t},{k}]", sm.selectors)
                    V[("eta" if last else "xi", owner if last else f"{owner}:{t}", k)] = y
                    cur, cur_ub = LinExpr.var(target), min(cur_ub, ub)
                if len(terms) == 1:  # pragma: no cover - at least one outgoing term exists
                    model.add_row(LinExpr.var(final) - cur, "=", 0.0, tag="junction_min")
                if jn.signalized:
                    u = model.add_var(f"u[{owner},{k}]", BINARY)
                    V[("u", owner, k)] = u
                    ub = model.variables[final].ub
                    m_u = bigm.m(ub)
                    model.add_row({q_out: 1.0, u: -m_u}, "<=", 0.0, f"gate.u[{owner},{k}]",
                                  "signal_gate")
                    model.add_row({q_out: 1.0, final: -1.0}, "<=", 0.0, f"gate.hi[{owner},{k}]",
                                  "signal_gate")
                    model.add_row({q_out: 1.0, final: -1.0, u: -m_u}, ">=", -m_u,
                                  f"gate.lo[{owner},{k}]", "signal_gate")
            for j, lout in enumerate(jn.outgoing):
                coeffs = {V[("qin", lout, k)]: 1.0}
                for i, lin in enumerate(jn.incoming):
                    if alpha[i, j] > 0:
                        coeffs[V[("qout", lin, k)]] = -float(alpha[i, j])
                model.add_row(coeffs, "=", 0.0, f"split[{jn.id},{lout},{k}]", "turning_split")
            if jn.signalized:
                model.add_row({V[("u", f"{jn.id}:{i}", k)]: 1.0 for i in range(len(jn.incoming))},
                              "=", 1.0, f"green[{jn.id},{k}]", "signal_split")

    obj = {}
    for k in range(1, horizon + 1):
        for lid in objective_links:
            idx = V[("qout", lid, k)]
            obj[idx] = obj.get(idx, 0.0) + 1.0 / (1 + k)
    model.set_objective(obj, "max")
    sm.throughput = dict(obj)
    return sm


# ---------------------------------------------------------------------------
# robust emission rows
# ---------------------------------------------------------------------------


def _as_expr(value) -> LinExpr:
    if isinstance(value, LinExpr):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        raise ModelError("occupancy must be a LinExpr or a float constant")
    return LinExpr(constant=float(value))


def _cap_expr(cap) -> LinExpr:
    """Right-hand side of a cap row: a number, a ``LinExpr`` or an ``EmissionCap``."""
    if isinstance(cap, EmissionCap):
        return LinExpr(constant=cap.E)
    return _as_expr(cap)


def _dual_rows(
    model: MilpModel,
    occupancy: Sequence[LinExpr | float],
    lower: Sequence[float],
    upper: Sequence[float],
    budget: float,
    cap: LinExpr,
    h: float,
    prefix: str,
    relax: tuple[int, float] | None = None,
    degree: int = 1,
) -> dict[str, object]:
    """Dual form of ``max_a sum_k sum_l a_{l,k} N_k^l h <= cap - N U_0 h``.

    Coefficients obey ``lower[l] <= a_{l,k} <= upper[l]`` and
    ``sum_{k, l>=1} a_{l,k} <= budget``.  Adds nonnegative ``beta``,
    ``gamma`` per (l, k), one ``theta``, the coupling equalities
    ``theta + beta - gamma = N_k^l h`` and the budget row.  Only
    ``degree = 1`` keeps the couplings linear, which is all this helper
    supports.  ``relax = (z, M)`` subtracts ``M (1 - z)`` from the budget row.
    """
    if degree != 1:
        raise ModelError("only first-order rows can be added to a linear model")
    n = len(occupancy)
    theta = model.add_var(f"theta[{prefix}]", lb=0.0)
    budget_row = LinExpr.var(theta, budget)
    budget_row.constant += n * upper[0] * h
    betas, gammas = [], []
    for k, occ in enumerate(occupancy, start=1):
        b = model.add_var(f"beta[{prefix},{k}]", lb=0.0)
        g = model.add_var(f"gamma[{prefix},{k}]", lb=0.0)
        betas.append(b)
        gammas.append(g)
        budget_row.add(b, upper[1]).add(g, -lower[1])
        coupling = LinExpr({theta: 1.0, b: 1.0, g: -1.0}) - _as_expr(occ) * h
        model.add_row(coupling, "=", 0.0, f"couple[{prefix},{k}]", "robust_coupling")
    lhs = budget_row - cap
    if relax is not None:
        z, big = relax
        lhs.add(z, big)
        lhs.constant -= big
    row = model.add_row(lhs, "<=", 0.0, f"budget[{prefix}]", "robust_budget")
    return {"theta": theta, "beta": betas, "gamma": gammas, "row": row}


def add_robust_affine(
    model: MilpModel,
    occupancy: Sequence[LinExpr | float],
    cap,
    uset: UncertaintySet,
    dt: float,
    time_scale: float = GRAMS_PER_GH_SECOND,
    prefix: str = "aff",
) -> dict[str, object]:
    """Robust counterpart of ``sum_k (a_{1,k} N_k + a_{0,k}) h <= cap`` for an affine set.

    Adds ``sum_k U1 beta_k - L1 gamma_k + (N U1 / sigma) theta + N U0 h <= cap``
    and ``theta + beta_k - gamma_k = h N_k``.
    """
    if uset.degree != 1:
        raise UncertaintySetError("affine rows need a first-order uncertainty set")
    n = len(occupancy)
    if n == 0:
        raise ModelError("need at least one occupancy term")
    h = dt * time_scale
    return _dual_rows(model, occupancy, uset.lower, uset.upper, n * uset.budget_per_step,
                      _cap_expr(cap), h, prefix)


def add_robust_convex_pwa(
    model: MilpModel,
    occupancy: Sequence[LinExpr | float],
    cap,
    pset: PiecewiseUncertaintySet,
    dt: float,
    time_scale: float = GRAMS_PER_GH_SECOND,
    prefix: str = "cvx",
) -> list[dict[str, object]]:
    """Robust rows for a convex (max-of-pieces) relation under a shared budget.

    One dual block per piece, all with right-hand side ``cap``.  The budget
    seen by piece ``m`` is the shared budget minus the lower-bound mass of
    the other pieces, which keeps each row equal to the inner maximum of
    its piece.
    """
    if pset.shape != "convex":
        raise UncertaintySetError("convex rows need a convex piecewise set")
    n = len(occupancy)
    h = dt * time_scale
    shared = n * pset.shared_budget_per_step
    out = []
    for m, piece in enumerate(pset.pieces):
        others = sum(p.lower[1] for q, p in enumerate(pset.pieces) if q != m)
        out.append(_dual_rows(model, occupancy, piece.lower, piece.upper, shared - n * others,
                              _cap_expr(cap), h, f"{prefix}.{m}"))
    return out


def concave_big_m(piece: UncertaintySet, n: int, h: float, occ_hi: float, cap: float) -> float:
    """Relaxation constant covering the piece's worst case at the largest occupancy."""
    worst = n * h * (max(piece.upper[1] * occ_hi, piece.lower[1] * occ_hi, 0.0) + piece.upper[0])
    return max(worst - cap, 0.0) + 1.0


def add_robust_concave_pwa(
    model: MilpModel,
    occupancy: Sequence[LinExpr | float],
    cap,
    pset: PiecewiseUncertaintySet,
    dt: float,
    time_scale: float = GRAMS_PER_GH_SECOND,
    occupancy_bound: float = 1e3,
    big_m: float | None = None,
    prefix: str = "ccv",
) -> dict[str, object]:
    """Robust rows for a concave (min-of-pieces) relation with independent piece sets.

    Binary ``z_m`` picks the piece whose robust bound is enforced
    (``sum_m z_m = 1``); the other pieces' rows are relaxed by ``M (1 - z_m)``.
    ``occupancy_bound`` is an upper bound on every ``|N_k|`` used to size ``M``.
    """
    if pset.shape != "concave":
        raise UncertaintySetError("concave rows need a concave piecewise set")
    n = len(occupancy)
    h = dt * time_scale
    cap_e = _cap_expr(cap)
    zs = []
    blocks = []
    for m, piece in enumerate(pset.pieces):
        z = model.add_var(f"z[{prefix},{m}]", BINARY)
        zs.append(z)
        if big_m is None:
            cap_lo = cap_e.constant if not cap_e.terms else 0.0
            bm = concave_big_m(piece, n, h, occupancy_bound, cap_lo)
        else:
            bm = big_m
        if piece.is_empty:
            blocks.append(None)
            continue
        blocks.append(_dual_rows(model, occupancy, piece.lower, piece.upper,
                                 n * piece.budget_per_step, cap_e, h, f"{prefix}.{m}",
                                 relax=(z, bm)))
    model.add_row({z: 1.0 for z in zs}, "=", 1.0, f"onepiece[{prefix}]", "piece_select")
    return {"z": zs, "blocks": blocks}


@dataclass
class PolynomialRobustExport:
    """Dual rows of a degree-``L`` robust cap written as text.

    For ``L >= 2`` the couplings contain powers of the occupancy, so they are
    exported rather than added to a linear model.  :meth:`evaluate` solves the
    dual program for a fixed occupancy vector.
    """

    degree: int
    n: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    budget: float
    h: float
    cap: float
    lines: list[str]

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def evaluate(self, occupancies: Sequence[float]) -> float:
        """Optimal value of the dual program (left-hand side minimized over the duals)."""
        from .solver.simplex import solve_lp

        occ = np.asarray(occupancies, dtype=float)
        if len(occ) != self.n:
            raise ModelError("occupancy vector length mismatch")
        m = MilpModel(name="poly-dual")
        theta = m.add_var("theta", lb=0.0)
        obj = {theta: self.budget}
        for l in range(1, self.degree + 1):
            for k in range(self.n):
                b = m.add_var(f"b{l}_{k}", lb=0.0)
                g = m.add_var(f"g{l}_{k}", lb=0.0)
                obj[b] = self.upper[l]
                obj[g] = -self.lower[l]
                m.add_row({theta: 1.0, b: 1.0, g: -1.0}, "=", occ[k] ** l * self.h)
        m.set_objective(obj, "min")
        sol = solve_lp(m)
        if sol.status == "unbounded":
            return -math.inf
        if sol.status != "optimal":
            raise ModelError(f"dual program status {sol.status}")
        return sol.objective + self.n * self.upper[0] * self.h


def general_polynomial_robust(
    model: MilpModel | None,
    occupancy: Sequence[LinExpr | float],
    cap,
    uset: UncertaintySet,
    dt: float,
    time_scale: float = GRAMS_PER_GH_SECOND,
    prefix: str = "poly",
    names: Sequence[str] | None = None,
):
    """Robust counterpart of a degree-``L`` polynomial relation.

    ``L = 1``: the rows are appended to ``model`` exactly as
    :func:`add_robust_affine` would and the added indices are returned.
    ``L >= 2``: returns a :class:`PolynomialRobustExport`; ``names`` labels
    the occupancy terms in the text (default ``N_k``).
    """
    if uset.degree < 1:
        raise UncertaintySetError("degree must be at least 1")
    n = len(occupancy)
    if uset.degree == 1:
        if model is None:
            raise ModelError("a model is required for first-order rows")
        return add_robust_affine(model, occupancy, cap, uset, dt, time_scale, prefix)
    h = dt * time_scale
    budget = n * uset.budget_per_step
    cap_val = _cap_expr(cap).constant
    names = list(names) if names is not None else [f"N_{k}" for k in range(1, n + 1)]
    L = uset.degree
    terms = []
    for l in range(1, L + 1):
        for k in range(1, n + 1):
            terms.append(f"{uset.upper[l]!r} beta_{l}_{k}")
            terms.append(f"- {uset.lower[l]!r} gamma_{l}_{k}")
    lines = [f"\\ robust cap {prefix}: degree {L}, h = {h!r}"]
    lines.append(
        f"budget: {' + '.join(terms)} + {budget!r} theta + {n * uset.upper[0] * h!r} <= {cap_val!r}"
    )
    for l in range(1, L + 1):
        for k in range(1, n + 1):
            lines.append(f"couple_{l}_{k}: theta + beta_{l}_{k} - gamma_{l}_{k} = {h!r} * {names[k - 1]}^{l}")
    lines.append("bounds: beta, gamma, theta >= 0")
    return PolynomialRobustExport(L, n, uset.lower, uset.upper, budget, h, cap_val, lines)


def add_equity(
    model: MilpModel,
    occ_i: Sequence[LinExpr | float],
    occ_j: Sequence[LinExpr | float],
    cap,
    uset: UncertaintySet,
    dt: float,
    time_scale: float = GRAMS_PER_GH_SECOND,
    prefix: str = "eq",
) -> dict[str, object]:
    """Robust bound on the emission difference ``sum_k (a_{1,k}(N_ik - N_jk) + a_{0,k}) h``."""
    diff = [_as_expr(a) - _as_expr(b) for a, b in zip(occ_i, occ_j)]
    return add_robust_affine(model, diff, cap, uset, dt, time_scale, prefix)


# -- SignalMilp-level wrappers ------------------------------------------------


def robust_affine_constraints(
    sm: SignalMilp,
    link: str,
    cap: EmissionCap | float,
    uset: UncertaintySet,
    time_scale: float = GRAMS_PER_GH_SECOND,
) -> SignalMilp:
    if link not in sm.network.links:
        raise ConfigurationError(f"unknown link {link}")
    if uset.is_empty:
        raise UncertaintySetError(
            f"uncertainty set for link {link} is empty at sigma = {uset.sigma:g}"
        )
    add_robust_affine(sm.model, sm.occupancies(link), cap, uset, sm.dt, time_scale,
                      prefix=f"aff.{link}")
    sm.caps[link] = cap.E if isinstance(cap, EmissionCap) else float(cap)
    sm.cap_checks.append((link, uset, sm.caps[link], time_scale))
    return sm


def robust_convex_pwa_constraints(
    sm: SignalMilp,
    link: str,
    cap: EmissionCap | float,
    pset: PiecewiseUncertaintySet,
    time_scale: float = GRAMS_PER_GH_SECOND,
) -> SignalMilp:
    add_robust_convex_pwa(sm.model, sm.occupancies(link), cap, pset, sm.dt, time_scale,
                          prefix=f"cvx.{link}")
    sm.caps[link] = cap.E if isinstance(cap, EmissionCap) else float(cap)
    return sm


def robust_concave_pwa_constraints(
    sm: SignalMilp,
    link: str,
    cap: EmissionCap | float,
    pset: PiecewiseUncertaintySet,
    time_scale: float = GRAMS_PER_GH_SECOND,
) -> SignalMilp:
    add_robust_concave_pwa(sm.model, sm.occupancies(link), cap, pset, sm.dt, time_scale,
                           occupancy_bound=sm.network.links[link].storage,
                           prefix=f"ccv.{link}")
    sm.caps[link] = cap.E if isinstance(cap, EmissionCap) else float(cap)
    return sm


def equity_constraints(
    sm: SignalMilp,
    pair: tuple[str, str],
    e_ij: float,
    uset: UncertaintySet,
    time_scale: float = GRAMS_PER_GH_SECOND,
) -> SignalMilp:
    i, j = pair
    add_equity(sm.model, sm.occupancies(i), sm.occupancies(j), e_ij, uset, sm.dt, time_scale,
               prefix=f"eq.{i}.{j}")
    return sm


def epigraph_min_emission(
    sm: SignalMilp,
    links: Iterable[str],
    uset: UncertaintySet | PiecewiseUncertaintySet,
    throughput_weight: float = 0.0,
    time_scale: float = GRAMS_PER_GH_SECOND,
) -> tuple[SignalMilp, list[int]]:
    """Minimize the worst-case emission of ``links`` through epigraph variables.

    Each link gets ``z_i >= worst-case emission``; the objective becomes
    ``max throughput_weight * throughput - sum_i z_i``.  Returns the model
    and the indices of the ``z_i``.
    """
    model = sm.model
    zs = []
    for lid in links:
        z = model.add_var(f"epi[{lid}]", lb=-math.inf)
        zs.append(z)
        cap = LinExpr.var(z)
        if isinstance(uset, PiecewiseUncertaintySet):
            if uset.shape != "convex":
                raise UncertaintySetError("epigraph form supports affine or convex sets")
            add_robust_convex_pwa(model, sm.occupancies(lid), cap, uset, sm.dt, time_scale,
                                  prefix=f"epi.{lid}")
        else:
            add_robust_affine(model, sm.occupancies(lid), cap, uset, sm.dt, time_scale,
                              prefix=f"epi.{lid}")
    obj = {i: throughput_weight * c for i, c in sm.throughput.items()}
    for z in zs:
        obj[z] = obj.get(z, 0.0) - 1.0
    model.set_objective(obj, "max")
    return sm, zs
