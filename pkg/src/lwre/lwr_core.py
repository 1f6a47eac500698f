"""Kinematic-wave traffic dynamics on links and signalized junctions.

Links carry a triangular fundamental diagram and are tracked only through
their boundary cumulative counts (link transmission model).  Interior
states are recovered afterwards from the boundary traces with the
Lax-Hopf formula for the Moskowitz function ``N(t, x)``.

Indexing convention used throughout the package:

* time step ``j`` (1-based) covers the interval ``(t^{j-1}, t^j]`` with
  ``t^j = j * dt``; per-step arrays have length ``N`` and hold step ``j``
  at index ``j - 1``;
* cumulative curves have length ``N + 1`` and hold the count at ``t^j`` at
  index ``j`` (index 0 is the empty initial state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

_REL_TOL = 1e-9


@dataclass(frozen=True)
class TriangularFD:
    """Triangular flow-density relation ``f(rho) = min(k rho, w (rho_jam - rho))``."""

    k: float
    w: float
    rho_jam: float
    rho_crit: float
    capacity: float

    def __post_init__(self) -> None:
        if self.k <= 0 or self.w <= 0:
            raise ConfigurationError("wave speeds k and w must be positive")
        if not 0 < self.rho_crit < self.rho_jam:
            raise ConfigurationError("need 0 < rho_crit < rho_jam")
        if not math.isclose(self.capacity, self.k * self.rho_crit, rel_tol=_REL_TOL):
            raise ConfigurationError("capacity must equal k * rho_crit")
        if not math.isclose(
            self.capacity, self.w * (self.rho_jam - self.rho_crit), rel_tol=_REL_TOL
        ):
            raise ConfigurationError("capacity must equal w * (rho_jam - rho_crit)")

    @classmethod
    def from_free_flow(cls, k: float, rho_jam: float, rho_crit: float) -> "TriangularFD":
        """Derive capacity and backward wave speed from ``k``, ``rho_jam``, ``rho_crit``."""
        capacity = k * rho_crit
        return cls(k, capacity / (rho_jam - rho_crit), rho_jam, rho_crit, capacity)


# k = 40/3 m/s, rho_jam = 0.4 veh/m, rho_crit = 0.1 veh/m  ->  C = 4/3, w = 40/9
URBAN_FD = TriangularFD.from_free_flow(40.0 / 3.0, 0.4, 0.1)


def _check_density(fd: TriangularFD, rho: np.ndarray) -> None:
    slack = 1e-12 * fd.rho_jam
    if np.any(rho < -slack) or np.any(rho > fd.rho_jam + slack) or np.any(np.isnan(rho)):
        raise DomainError(f"density outside [0, {fd.rho_jam}]")


def fd_flow(fd: TriangularFD, rho):
    """Flow (veh/s) at density ``rho`` (scalar or array)."""
    arr = np.asarray(rho, dtype=float)
    _check_density(fd, arr)
    out = np.where(arr <= fd.rho_crit, fd.k * arr, -fd.w * (arr - fd.rho_jam))
    return float(out) if out.ndim == 0 else out


def fd_velocity(fd: TriangularFD, rho):
    """Space-mean speed ``f(rho) / rho`` with the free-flow limit ``k`` at zero density."""
    arr = np.asarray(rho, dtype=float)
    _check_density(fd, arr)
    flow = np.where(arr <= fd.rho_crit, fd.k * arr, -fd.w * (arr - fd.rho_jam))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(arr > fd.rho_crit, flow / np.where(arr > 0, arr, 1.0), fd.k)
    v = np.maximum(v, 0.0)
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class Link:
    id: str
    length: float
    fd: TriangularFD
    delta_f: int
    delta_b: int

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ConfigurationError(f"link {self.id}: length must be positive")
        if self.delta_f < 1 or self.delta_b < 1:
            raise ConfigurationError(f"link {self.id}: travel times must be >= 1 step")

    @classmethod
    def on_grid(cls, id: str, length: float, fd: TriangularFD, dt: float) -> "Link":
        """Build a link whose free-flow and backward travel times are whole steps of ``dt``."""
        steps = []
        for speed, name in ((fd.k, "L/k"), (fd.w, "L/w")):
            ratio = length / speed / dt
            n = round(ratio)
            if n < 1 or not math.isclose(ratio, n, rel_tol=_REL_TOL, abs_tol=1e-9):
                raise ConfigurationError(
                    f"link {id}: {name} = {length / speed:g} s is not a whole "
                    f"number of steps of dt = {dt:g} s"
                )
            steps.append(n)
        return cls(str(id), float(length), fd, steps[0], steps[1])

    @property
    def capacity(self) -> float:
        return self.fd.capacity

    @property
    def storage(self) -> float:
        """Jam storage ``rho_jam * L`` in vehicles."""
        return self.fd.rho_jam * self.length


@dataclass
class CumulativeCurves:
    """Cumulative entering / exiting counts at the two link boundaries."""

    n_up: np.ndarray
    n_down: np.ndarray

    @classmethod
    def from_flows(cls, q_in: Sequence[float], q_out: Sequence[float], dt: float):
        q_in = np.asarray(q_in, dtype=float)
        q_out = np.asarray(q_out, dtype=float)
        return cls(
            np.concatenate(([0.0], dt * np.cumsum(q_in))),
            np.concatenate(([0.0], dt * np.cumsum(q_out))),
        )

    @property
    def horizon(self) -> int:
        return len(self.n_up) - 1

    def occupancy(self) -> np.ndarray:
        return self.n_up - self.n_down

    def check(self, link: Link, tol: float = 1e-9) -> None:
        """Raise ``ConfigurationError`` if any curve invariant is violated."""
        up, down = self.n_up, self.n_down
        scale = tol * max(1.0, link.storage)
        if abs(up[0]) > scale or abs(down[0]) > scale:
            raise ConfigurationError("curves must start at zero")
        if np.any(np.diff(up) < -scale) or np.any(np.diff(down) < -scale):
            raise ConfigurationError("cumulative curves must be nondecreasing")
        occ = up - down
        if np.any(occ < -scale) or np.any(occ > link.storage + scale):
            raise ConfigurationError("occupancy outside [0, rho_jam * L]")
        n = self.horizon
        for j in range(link.delta_f, n + 1):
            if down[j] > up[j - link.delta_f] + scale:
                raise ConfigurationError(f"vehicles exit before traversing at t^{j}")
        for j in range(link.delta_b, n + 1):
            if up[j] > down[j - link.delta_b] + link.storage + scale:
                raise ConfigurationError(f"spillback bound violated at t^{j}")


def _at(curve: np.ndarray, idx: int) -> float:
    return float(curve[idx]) if idx >= 0 else 0.0


def entrance_space(link: Link, curves: CumulativeCurves, j: int) -> float:
    """Vehicles the entrance can accept during step ``j`` (upper bound from the backward wave)."""
    return _at(curves.n_down, j - link.delta_b) + link.storage - _at(curves.n_up, j - 1)


def exit_available(link: Link, curves: CumulativeCurves, j: int) -> float:
    """Vehicles that have reached the exit and can leave during step ``j``."""
    return _at(curves.n_up, j - link.delta_f) - _at(curves.n_down, j - 1)


@dataclass
class PhaseIndicators:
    """Congestion indicators indexed by time level ``j = 0..N``."""

    r_up: np.ndarray
    r_down: np.ndarray


def phase_indicators(link: Link, curves: CumulativeCurves, eps: float = 1e-4) -> PhaseIndicators:
    """Boundary congestion indicators read off the cumulative curves.

    ``r_up[j] = 1`` iff ``N_up[j] >= N_down[j - delta_b] + rho_jam L - eps``
    (the entrance sits on the jam characteristic) and ``r_down[j] = 1`` iff
    ``N_up[j - delta_f] >= N_down[j] + eps`` (a queue waits at the exit).
    Counts before ``t = 0`` are zero.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    n = curves.horizon
    r_up = np.zeros(n + 1, dtype=int)
    r_down = np.zeros(n + 1, dtype=int)
    for j in range(n + 1):
        r_up[j] = curves.n_up[j] >= _at(curves.n_down, j - link.delta_b) + link.storage - eps
        r_down[j] = _at(curves.n_up, j - link.delta_f) >= curves.n_down[j] + eps
    return PhaseIndicators(r_up, r_down)


def _step_flow(curve: np.ndarray, m: int, dt: float) -> float:
    if m < 1 or m >= len(curve):
        return 0.0
    return float(curve[m] - curve[m - 1]) / dt


def link_demand(
    link: Link, curves: CumulativeCurves, r_down: Sequence[int], j: int, dt: float
) -> float:
    """Sending flow: ``C`` when the exit is queued, else the inflow ``delta_f`` steps ago."""
    if r_down[j]:
        return link.capacity
    return _step_flow(curves.n_up, j - link.delta_f, dt)


def link_supply(
    link: Link, curves: CumulativeCurves, r_up: Sequence[int], j: int, dt: float
) -> float:
    """Receiving flow: ``C`` when the entrance is free, else the outflow ``delta_b`` steps ago."""
    if not r_up[j]:
        return link.capacity
    return _step_flow(curves.n_down, j - link.delta_b, dt)


def step_phases(
    link: Link, curves: CumulativeCurves, j: int, dt: float, eps: float = 1e-4
) -> tuple[int, int]:
    """Boundary regimes governing step ``j`` in the time-stepping scheme.

    The entrance is congested when fewer than ``C dt`` vehicles of space
    remain; the exit is congested when at least ``C dt`` vehicles are ready
    to leave.  Returns ``(r_up, r_down)``.
    """
    cap_step = link.capacity * dt
    r_up = int(entrance_space(link, curves, j) <= cap_step + eps)
    r_down = int(exit_available(link, curves, j) >= cap_step - eps)
    return r_up, r_down


def sending_flow(link: Link, curves: CumulativeCurves, j: int, dt: float) -> float:
    """Vehicles able to leave during step ``j``, as a rate capped at capacity.

    In free flow this is the inflow ``delta_f`` steps earlier; with a
    standing queue it is ``C``.
    """
    return min(link.capacity, max(exit_available(link, curves, j), 0.0) / dt)


def receiving_flow(link: Link, curves: CumulativeCurves, j: int, dt: float) -> float:
    """Vehicles the entrance can take during step ``j``, as a rate capped at capacity.

    Without spillback this is ``C``; once the jam reaches the entrance it
    is the outflow ``delta_b`` steps earlier.
    """
    return min(link.capacity, max(entrance_space(link, curves, j), 0.0) / dt)


def junction_flows(
    demands: Sequence[float],
    supplies: Sequence[float],
    turning: np.ndarray,
    controls: Sequence[int] | None = None,
    signalized: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Exit flows of incoming links and entry flows of outgoing links at one node.

    ``q_out[i] = u_i * min(D_i, min_{j: a_ij > 0} S_j / a_ij)`` and
    ``q_in[j] = sum_i a_ij q_out[i]``.
    """
    demands = np.asarray(demands, dtype=float)
    supplies = np.asarray(supplies, dtype=float)
    turning = np.asarray(turning, dtype=float)
    n_in, n_out = turning.shape
    if controls is None or not signalized:
        controls = np.ones(n_in, dtype=int)
    controls = np.asarray(controls)
    if signalized and controls.sum() > 1:
        raise ConfigurationError("at most one approach may be green")
    q_out = np.zeros(n_in)
    for i in range(n_in):
        row = turning[i]
        if not np.any(row > 0):
            raise ConfigurationError(f"approach {i} has an all-zero turning row")
        if not controls[i]:
            continue
        ratios = [supplies[j] / row[j] for j in range(n_out) if row[j] > 0]
        q_out[i] = min(demands[i], min(ratios))
    q_in = turning.T @ q_out
    return q_out, q_in


@dataclass(frozen=True)
class JunctionSpec:
    id: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]
    turning: np.ndarray
    signalized: bool = True

    def __post_init__(self) -> None:
        turning = np.asarray(self.turning, dtype=float)
        object.__setattr__(self, "turning", turning)
        if turning.shape != (len(self.incoming), len(self.outgoing)):
            raise ConfigurationError(f"junction {self.id}: turning matrix shape mismatch")
        if np.any(turning < 0):
            raise ConfigurationError(f"junction {self.id}: negative turning ratio")
        if not np.allclose(turning.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ConfigurationError(f"junction {self.id}: turning rows must sum to 1")
        if self.signalized and len(self.incoming) < 2:
            raise ConfigurationError(f"junction {self.id}: a signal needs >= 2 approaches")


@dataclass
class Network:
    links: dict[str, Link]
    junctions: list[JunctionSpec]
    dt: float

    def __post_init__(self) -> None:
        seen_in: set[str] = set()
        seen_out: set[str] = set()
        for jn in self.junctions:
            for lid in jn.incoming + jn.outgoing:
                if lid not in self.links:
                    raise ConfigurationError(f"junction {jn.id}: unknown link {lid}")
            for lid in jn.incoming:
                if lid in seen_in:
                    raise ConfigurationError(f"link {lid} ends at two junctions")
                seen_in.add(lid)
            for lid in jn.outgoing:
                if lid in seen_out:
                    raise ConfigurationError(f"link {lid} starts at two junctions")
                seen_out.add(lid)
        self._ends = seen_in
        self._starts = seen_out

    @property
    def sources(self) -> list[str]:
        return [lid for lid in self.links if lid not in self._starts]

    @property
    def sinks(self) -> list[str]:
        return [lid for lid in self.links if lid not in self._ends]

    @property
    def signalized(self) -> list[JunctionSpec]:
        return [jn for jn in self.junctions if jn.signalized]

    def junction(self, jid: str) -> JunctionSpec:
        for jn in self.junctions:
            if jn.id == jid:
                return jn
        raise KeyError(jid)


@dataclass
class SignalPlan:
    """Binary green indicators ``controls[junction_id][approach, step]``."""

    controls: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self, network: Network, horizon: int) -> None:
        for jn in network.signalized:
            if jn.id not in self.controls:
                raise ConfigurationError(f"no signal plan for junction {jn.id}")
            u = np.asarray(self.controls[jn.id])
            if u.shape != (len(jn.incoming), horizon):
                raise ConfigurationError(f"junction {jn.id}: plan shape {u.shape}")
            if not np.isin(u, (0, 1)).all():
                raise ConfigurationError(f"junction {jn.id}: controls must be binary")
            if np.any(u.sum(axis=0) != 1):
                raise ConfigurationError(f"junction {jn.id}: exactly one green per step")

    @classmethod
    def fixed_time(cls, network: Network, horizon: int, green_steps: int) -> "SignalPlan":
        """Round-robin plan giving each approach ``green_steps`` consecutive steps."""
        controls = {}
        for jn in network.signalized:
            u = np.zeros((len(jn.incoming), horizon), dtype=int)
            for j in range(horizon):
                u[(j // green_steps) % len(jn.incoming), j] = 1
            controls[jn.id] = u
        return cls(controls)


@dataclass
class SimulationResult:
    dt: float
    horizon: int
    q_in: dict[str, np.ndarray]
    q_out: dict[str, np.ndarray]
    supply: dict[str, np.ndarray]
    demand: dict[str, np.ndarray]
    curves: dict[str, CumulativeCurves]
    r_up: dict[str, np.ndarray] = field(default_factory=dict)
    r_down: dict[str, np.ndarray] = field(default_factory=dict)

    def occupancy(self, link_id: str) -> np.ndarray:
        return self.curves[link_id].occupancy()


def ltm_simulate(
    network: Network,
    plan: SignalPlan | None,
    boundary_demands: Mapping[str, Sequence[float]],
    horizon: int,
    exit_supplies: Mapping[str, Sequence[float]] | None = None,
    eps: float = 1e-4,
) -> SimulationResult:
    """Forward-simulate the network for ``horizon`` steps.

    Each step evaluates the boundary regimes (:func:`step_phases`), the
    sending and receiving flows of every link and the junction merge rule.
    Source links admit ``min(boundary demand, entrance supply)``; sink links
    discharge their sending flow, optionally capped by ``exit_supplies``.
    Per-step regime indicators are returned alongside the flows.
    """
    dt = network.dt
    plan = plan or SignalPlan()
    if network.signalized:
        plan.validate(network, horizon)
    exit_supplies = exit_supplies or {}
    sources, sinks = network.sources, network.sinks
    demands = {}
    for lid in sources:
        prof = np.asarray(boundary_demands.get(lid, np.zeros(horizon)), dtype=float)
        if len(prof) < horizon:
            raise ConfigurationError(f"demand profile for link {lid} shorter than horizon")
        demands[lid] = prof
    for lid in boundary_demands:
        if lid not in network.links:
            raise ConfigurationError(f"demand given for unknown link {lid}")

    ids = list(network.links)
    q_in = {lid: np.zeros(horizon) for lid in ids}
    q_out = {lid: np.zeros(horizon) for lid in ids}
    supply = {lid: np.zeros(horizon) for lid in ids}
    demand = {lid: np.zeros(horizon) for lid in ids}
    r_up = {lid: np.zeros(horizon, dtype=int) for lid in ids}
    r_down = {lid: np.zeros(horizon, dtype=int) for lid in ids}
    n_up = {lid: np.zeros(horizon + 1) for lid in ids}
    n_down = {lid: np.zeros(horizon + 1) for lid in ids}
    curves = {lid: CumulativeCurves(n_up[lid], n_down[lid]) for lid in ids}

    for j in range(1, horizon + 1):
        for lid in ids:
            link, cur = network.links[lid], curves[lid]
            r_up[lid][j - 1], r_down[lid][j - 1] = step_phases(link, cur, j, dt, eps)
            supply[lid][j - 1] = receiving_flow(link, cur, j, dt)
            demand[lid][j - 1] = sending_flow(link, cur, j, dt)
        for lid in sources:
            q_in[lid][j - 1] = min(max(demands[lid][j - 1], 0.0), supply[lid][j - 1])
        for jn in network.junctions:
            u = None
            if jn.signalized:
                u = plan.controls[jn.id][:, j - 1]
            outs, ins = junction_flows(
                [demand[lid][j - 1] for lid in jn.incoming],
                [supply[lid][j - 1] for lid in jn.outgoing],
                jn.turning,
                u,
                jn.signalized,
            )
            for lid, val in zip(jn.incoming, outs):
                q_out[lid][j - 1] = val
            for lid, val in zip(jn.outgoing, ins):
                q_in[lid][j - 1] = val
        for lid in sinks:
            cap = exit_supplies.get(lid)
            val = demand[lid][j - 1]
            if cap is not None:
                val = min(val, max(float(cap[j - 1]), 0.0))
            q_out[lid][j - 1] = val
        for lid in ids:
            n_up[lid][j] = n_up[lid][j - 1] + dt * q_in[lid][j - 1]
            n_down[lid][j] = n_down[lid][j - 1] + dt * q_out[lid][j - 1]

    return SimulationResult(dt, horizon, q_in, q_out, supply, demand, curves, r_up, r_down)


@dataclass
class MoskowitzGrid:
    """Values ``N(t_i, x_j)`` on a uniform grid; ``x`` measured from the link entrance."""

    values: np.ndarray
    dt: float
    dx: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.dt

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) * self.dx


def lax_hopf_moskowitz(
    link: Link,
    curves: CumulativeCurves,
    dt: float,
    dx: float,
    grid_dt: float | None = None,
) -> MoskowitzGrid:
    """Moskowitz surface from the boundary traces of an initially empty link.

    ``N(t, x) = min(N_up(t - x/k), N_down(t - (L - x)/w) + rho_jam (L - x))``
    with the traces interpolated linearly between steps and zero before t=0.
    """
    nx = link.length / dx
    if dx <= 0 or not math.isclose(nx, round(nx), rel_tol=_REL_TOL):
        raise ConfigurationError(f"dx = {dx:g} does not divide L = {link.length:g}")
    nx = int(round(nx))
    grid_dt = dt if grid_dt is None else grid_dt
    t_end = curves.horizon * dt
    n_t = int(math.floor(t_end / grid_dt + 1e-9))
    t = np.arange(n_t + 1) * grid_dt
    x = np.arange(nx + 1) * dx
    knots = np.arange(curves.horizon + 1) * dt
    fd = link.fd
    t_up = (t[:, None] - x[None, :] / fd.k).ravel()
    t_dn = (t[:, None] - (link.length - x[None, :]) / fd.w).ravel()
    up = np.interp(t_up, knots, curves.n_up, left=0.0).reshape(len(t), len(x))
    down = np.interp(t_dn, knots, curves.n_down, left=0.0).reshape(len(t), len(x))
    down += fd.rho_jam * (link.length - x)[None, :]
    return MoskowitzGrid(np.minimum(up, down), grid_dt, dx)


def density_velocity_fields(
    grid: MoskowitzGrid, fd: TriangularFD
) -> tuple[np.ndarray, np.ndarray]:
    """Density ``-dN/dx`` (central differences, one-sided at the ends) and speed."""
    if grid.values.shape[1] < 2:
        raise ConfigurationError("need at least two spatial points")
    rho = -np.gradient(grid.values, grid.dx, axis=1)
    rho = np.clip(rho, 0.0, fd.rho_jam)
    return rho, fd_velocity(fd, rho)


def acceleration_field(v: np.ndarray, dt: float, dx: float) -> np.ndarray:
    """Material derivative ``v_t + v v_x`` by finite differences."""
    v = np.asarray(v, dtype=float)
    dv_dt = np.gradient(v, dt, axis=0) if v.shape[0] > 1 else np.zeros_like(v)
    dv_dx = np.gradient(v, dx, axis=1) if v.shape[1] > 1 else np.zeros_like(v)
    return dv_dt + v * dv_dx
