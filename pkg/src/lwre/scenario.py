"""Signal-timing experiments on the four-intersection test network.

A :class:`Scenario` bundles a network, constant or time-varying source
demands, the objective links and optional per-link emission caps with
their uncertainty set.  :func:`run_base` optimizes throughput alone and
:func:`run_lwre` adds one robust emission row block per capped link.
Both solve the MILP the same way: a simulation-based plan search supplies
the first incumbent, branch-and-bound then improves it or proves it
optimal within the time limit, and the best signal plan is replayed
through the link transmission model.  Emissions of the replayed traffic
come from the modal model evaluated on the Moskowitz surface.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .emissions import ModalEmissionParams, SpeedEmissionParams, link_aer, total_emission
from .errors import ConfigurationError, UncertaintySetError
from .lwr_core import (
    URBAN_FD,
    JunctionSpec,
    Link,
    MoskowitzGrid,
    Network,
    SignalPlan,
    SimulationResult,
    TriangularFD,
    acceleration_field,
    density_velocity_fields,
    lax_hopf_moskowitz,
    ltm_simulate,
)
from .plan_search import PlanSearchConfig, SignalPlanSearch, complete_plan
from .robust_milp import (
    GRAMS_PER_GH_SECOND,
    EmissionCap,
    SignalMilp,
    build_signal_milp,
    robust_affine_constraints,
)
from .solver.bnb import BnbConfig, solve_milp
from .uncertainty import UncertaintySet, worst_case_emission

log = logging.getLogger(__name__)

PRESET_RATIOS = {
    "I": {"1": 0.531, "2": 0.437, "10": 0.516},
    "II": {"1": 0.606, "2": 0.512, "10": 0.684},
    "III": {"1": 0.644, "2": 0.549, "10": 0.8338},
}
PRESET_CAPS = {
    "I": {"1": 390.0, "2": 310.0, "3": 210.0, "4": 160.0, "5": 310.0, "6": 240.0},
    "II": {"1": 600.0, "2": 380.0, "3": 300.0, "4": 210.0, "5": 490.0, "6": 250.0},
    "III": {"1": 1100.0, "2": 440.0, "3": 750.0, "4": 300.0, "5": 600.0, "6": 300.0},
}
DEFAULT_BOUNDS = {"l0": 0.0, "u0": 400.0, "l1": 53.3, "u1": 66.0}
DEFAULT_SIGMA = 1.2

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_LIMIT = 3


class ScenarioError(ConfigurationError):
    """A scenario file violates the schema; the message starts with the field path."""


def _link_key(lid: str):
    """Sort key placing numeric link ids in numeric order before other ids."""
    return (0, int(lid), "") if lid.isdigit() else (1, 0, lid)


def four_intersection_network(dt: float = 10.0, fd: TriangularFD = URBAN_FD) -> Network:
    """Ten 400 m links meeting at three signalized junctions and one unsignalized split.

    Sources are links 1, 2 and 10; sinks are 7, 8 and 9.  Node ``D`` splits
    link 10 onto links 3 and 4 without a signal.
    """
    links = {str(i): Link.on_grid(str(i), 400.0, fd, dt) for i in range(1, 11)}
    junctions = [
        JunctionSpec("D", ("10",), ("3", "4"), np.array([[0.53, 0.47]]), signalized=False),
        JunctionSpec("A", ("1", "3"), ("5", "7"), np.array([[0.5, 0.5], [0.4, 0.6]])),
        JunctionSpec("B", ("2", "5"), ("6", "8"), np.array([[0.3, 0.7], [0.5, 0.5]])),
        JunctionSpec("C", ("4", "6"), ("9",), np.array([[1.0], [1.0]])),
    ]
    return Network(links, junctions, dt)


@dataclass
class Scenario:
    name: str
    network: Network
    horizon: int
    demands: dict[str, np.ndarray]
    objective_links: list[str]
    caps: dict[str, float] = field(default_factory=dict)
    uncertainty: UncertaintySet | None = None
    emission_model: str = "modal"
    notes: list[str] = field(default_factory=list)
    report_links: list[str] | None = None  # links whose emissions are reported; None = all
    speed_params: SpeedEmissionParams = field(default_factory=SpeedEmissionParams)
    modal_params: ModalEmissionParams = field(default_factory=ModalEmissionParams)

    def __post_init__(self) -> None:
        if self.report_links is None:
            self.report_links = list(self.network.links)
        for lid in self.report_links:
            if lid not in self.network.links:
                raise ScenarioError(f"report_links: unknown link {lid}")
        if self.horizon < 1:
            raise ScenarioError("horizon: must be at least one step")
        for lid, d in list(self.demands.items()):
            if lid not in self.network.sources:
                raise ScenarioError(f"demands.{lid}: not a source link")
            arr = np.asarray(d, dtype=float)
            if arr.ndim == 0:
                arr = np.full(self.horizon, float(arr))
            if arr.shape != (self.horizon,):
                raise ScenarioError(f"demands.{lid}: expected {self.horizon} values")
            cap = self.network.links[lid].capacity
            if np.any(arr < 0) or np.any(arr > cap * (1 + 1e-12)):
                raise ScenarioError(f"demands.{lid}: values must lie in [0, {cap:g}]")
            self.demands[lid] = arr
        for lid in self.objective_links:
            if lid not in self.network.links:
                raise ScenarioError(f"objective_links: unknown link {lid}")
        for lid, cap in self.caps.items():
            if lid not in self.network.links:
                raise ScenarioError(f"caps.{lid}: unknown link")
            if not cap > 0:
                raise ScenarioError(f"caps.{lid}: must be positive")
        if self.emission_model not in ("speed", "modal"):
            raise ScenarioError(f"emission_model: unknown model {self.emission_model!r}")

    @property
    def dt(self) -> float:
        return self.network.dt

    @property
    def duration(self) -> float:
        return self.horizon * self.dt

    def with_caps(self, caps: Mapping[str, float] | None, scale: float = 1.0) -> "Scenario":
        caps = {k: float(v) * scale for k, v in (caps or {}).items() if math.isfinite(v)}
        return replace(self, caps=caps, demands=dict(self.demands), notes=list(self.notes))

    def with_sigma(self, sigma: float) -> "Scenario":
        if self.uncertainty is None:
            raise ConfigurationError("scenario has no uncertainty set")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            uset = self.uncertainty.with_sigma(sigma)
        return replace(self, uncertainty=uset, demands=dict(self.demands), notes=list(self.notes))


def preset(name: str, horizon: int = 90, dt: float = 10.0, with_caps: bool = True) -> Scenario:
    """Built-in demand scenario ``I``, ``II`` or ``III`` (constant demands, 15 minutes by default)."""
    key = name.upper().removeprefix("SCENARIO-")
    if key not in PRESET_RATIOS:
        raise ScenarioError(f"preset: unknown preset {name!r} (choose I, II or III)")
    net = four_intersection_network(dt)
    demands = {lid: np.full(horizon, r * net.links[lid].capacity)
               for lid, r in PRESET_RATIOS[key].items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        uset = UncertaintySet.affine(**DEFAULT_BOUNDS, sigma=DEFAULT_SIGMA)
    return Scenario(
        name=f"scenario-{key}",
        network=net,
        horizon=horizon,
        demands=demands,
        objective_links=["7", "8", "9"],
        caps=dict(PRESET_CAPS[key]) if with_caps else {},
        uncertainty=uset,
        notes=["constant demand at the preset average-to-capacity ratios"],
        report_links=[str(i) for i in range(1, 7)],
    )


def _require(obj: Mapping, key: str, path: str):
    if key not in obj:
        raise ScenarioError(f"{path}{key}: missing")
    return obj[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path}: expected a number")
    return float(value)


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    """Validate a scenario document; ``{"preset": "I"}`` starts from a built-in preset."""
    if not isinstance(data, Mapping):
        raise ScenarioError("<root>: expected an object")
    dt = _number(data.get("dt", 10.0), "dt")
    horizon = data.get("horizon", 90)
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        raise ScenarioError("horizon: expected a positive integer")
    if "duration" in data:
        duration = _number(data["duration"], "duration")
        if not math.isclose(duration, horizon * dt, rel_tol=1e-9):
            raise ScenarioError(f"duration: {duration:g} s != horizon * dt = {horizon * dt:g} s")
    if "preset" in data:
        base = preset(str(data["preset"]), horizon, dt, with_caps="caps" not in data)
        network, name = base.network, data.get("name", base.name)
        demands = dict(base.demands)
        objective_links = base.objective_links
        uset = base.uncertainty
    else:
        network = _network_from_dict(_require(data, "network", ""), dt)
        name = str(data.get("name", "scenario"))
        demands = {}
        objective_links = list(network.sinks)
        uset = None
        base = None
    for lid, value in (data.get("demands") or {}).items():
        if isinstance(value, list):
            demands[str(lid)] = np.array([_number(v, f"demands.{lid}[{i}]")
                                          for i, v in enumerate(value)])
        else:
            demands[str(lid)] = np.full(horizon, _number(value, f"demands.{lid}"))
    if "objective_links" in data:
        objective_links = [str(v) for v in data["objective_links"]]
    report_links = base.report_links if base is not None else None
    if "report_links" in data:
        report_links = [str(v) for v in data["report_links"]]
    caps = {str(k): _number(v, f"caps.{k}") for k, v in (data.get("caps") or {}).items()}
    if base is not None and "caps" not in data:
        caps = dict(base.caps)
    if "uncertainty" in data:
        u = data["uncertainty"]
        bounds = {k: _number(_require(u, k, "uncertainty."), f"uncertainty.{k}")
                  for k in ("l0", "u0", "l1", "u1")}
        sigma = _number(u.get("sigma", 1.0), "uncertainty.sigma")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                uset = UncertaintySet.affine(**bounds, sigma=sigma)
        except UncertaintySetError as exc:
            raise ScenarioError(f"uncertainty: {exc}") from exc
    if caps and uset is None:
        raise ScenarioError("uncertainty: required when caps are given")
    model, speed_params, modal_params = _emission_from_dict(data)
    return Scenario(name, network, horizon, demands, objective_links, caps, uset, model,
                    report_links=report_links, speed_params=speed_params,
                    modal_params=modal_params)


def _emission_from_dict(data: Mapping[str, Any]):
    """``emission`` block: ``model``, ``mass_kg``, ``grade_rad`` and ``mph_strict``."""
    block = data.get("emission", {})
    if not isinstance(block, Mapping):
        raise ScenarioError("emission: expected an object")
    model = str(block.get("model", data.get("emission_model", "modal")))
    strict = block.get("mph_strict", False)
    if not isinstance(strict, bool):
        raise ScenarioError("emission.mph_strict: expected true or false")
    try:
        modal = ModalEmissionParams(
            mass=_number(block.get("mass_kg", ModalEmissionParams.mass), "emission.mass_kg"),
            theta=_number(block.get("grade_rad", ModalEmissionParams.theta), "emission.grade_rad"),
        )
    except ConfigurationError as exc:
        raise ScenarioError(f"emission: {exc}") from exc
    return model, SpeedEmissionParams(mph_strict=strict), modal


def _network_from_dict(data: Mapping[str, Any], dt: float) -> Network:
    fd_data = data.get("fd", {})
    try:
        fd = TriangularFD.from_free_flow(
            _number(fd_data.get("k", URBAN_FD.k), "network.fd.k"),
            _number(fd_data.get("rho_jam", URBAN_FD.rho_jam), "network.fd.rho_jam"),
            _number(fd_data.get("rho_crit", URBAN_FD.rho_crit), "network.fd.rho_crit"),
        )
    except ConfigurationError as exc:
        raise ScenarioError(f"network.fd: {exc}") from exc
    links = {}
    for i, item in enumerate(_require(data, "links", "network.")):
        lid = str(_require(item, "id", f"network.links[{i}]."))
        length = _number(_require(item, "length", f"network.links[{i}]."),
                         f"network.links[{i}].length")
        try:
            links[lid] = Link.on_grid(lid, length, fd, dt)
        except ConfigurationError as exc:
            raise ScenarioError(f"network.links[{i}]: {exc}") from exc
    junctions = []
    for i, item in enumerate(data.get("junctions", [])):
        path = f"network.junctions[{i}]"
        try:
            junctions.append(JunctionSpec(
                str(_require(item, "id", path + ".")),
                tuple(str(v) for v in _require(item, "incoming", path + ".")),
                tuple(str(v) for v in _require(item, "outgoing", path + ".")),
                np.array(_require(item, "turning", path + "."), dtype=float),
                bool(item.get("signalized", True)),
            ))
        except (ConfigurationError, ValueError) as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    try:
        return Network(links, junctions, dt)
    except ConfigurationError as exc:
        raise ScenarioError(f"network: {exc}") from exc


def load_scenario(source: str | Path) -> Scenario:
    """Scenario from a preset name (``I``, ``scenario-II``, ...) or a JSON file."""
    text = str(source)
    key = text.upper().removeprefix("SCENARIO-")
    if key in PRESET_RATIOS and not Path(text).exists():
        return preset(key)
    path = Path(source)
    if not path.exists():
        raise ScenarioError(f"<file>: {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"<file>: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


# -- solving --------------------------------------------------------------------


@dataclass(frozen=True)
class SolveConfig:
    """Budgets for the incumbent search and the branch-and-bound phase."""

    search: PlanSearchConfig = field(default_factory=PlanSearchConfig)
    bnb_time_limit: float = 120.0
    gap: float = 1e-6
    engine: str = "auto"
    empty_set: str = "error"  # or "vacuous": an empty set imposes no constraint

    def __post_init__(self) -> None:
        if self.empty_set not in ("error", "vacuous"):
            raise ConfigurationError("empty_set must be 'error' or 'vacuous'")


@dataclass
class SolveOutcome:
    status: str  # optimal | limit | infeasible
    objective: float
    bound: float
    plan: SignalPlan | None
    x: np.ndarray | None
    search_score: float
    nodes: int
    elapsed: float
    message: str = ""
    search_plan: SignalPlan | None = None  # best plan of the search, feasible or not

    @property
    def feasible(self) -> bool:
        return self.x is not None


def build_model(scenario: Scenario, with_caps: bool, config: SolveConfig | None = None) -> SignalMilp:
    """The scenario's MILP, with one robust row block per capped link when ``with_caps``."""
    config = config or SolveConfig()
    sm = build_signal_milp(scenario.network, scenario.horizon,
                           objective_links=scenario.objective_links,
                           boundary_demands=scenario.demands)
    if with_caps and scenario.caps:
        uset = scenario.uncertainty
        if uset is None:
            raise ConfigurationError("caps need an uncertainty set")
        if uset.is_empty and config.empty_set == "vacuous":
            log.info("empty uncertainty set: caps impose no constraint")
            return sm
        for lid, cap in sorted(scenario.caps.items(), key=lambda kv: _link_key(kv[0])):
            robust_affine_constraints(sm, lid, EmissionCap(lid, cap), uset)
    return sm


def solve_scenario_model(
    sm: SignalMilp,
    config: SolveConfig | None = None,
    starts: list[SignalPlan] | None = None,
) -> SolveOutcome:
    """Plan search for an incumbent, then branch-and-bound with time-ordered branching."""
    config = config or SolveConfig()
    t0 = time.perf_counter()
    search = SignalPlanSearch(sm, config.search)
    plan, score = search.run(starts)
    feasible = search.feasible_plan
    x0 = complete_plan(sm, feasible) if feasible is not None else None
    log.info("plan search: score %.6f, incumbent %s", score,
             f"{search.feasible_score:.6f}" if x0 is not None else "none")
    remaining = max(1.0, config.bnb_time_limit)
    result = solve_milp(
        sm.model,
        BnbConfig(gap=config.gap, time_limit=remaining, engine=config.engine,
                  priorities=sm.branching_priorities()),
        incumbent=x0,
    )
    elapsed = time.perf_counter() - t0
    if result.x is None:
        status = "infeasible" if result.status == "infeasible" else "limit"
        message = ("no signal plan satisfies the caps" if status == "infeasible"
                   else "no feasible signal plan found within the limits")
        return SolveOutcome(status, math.nan, result.bound, None, None, score, result.nodes,
                            elapsed, message, search_plan=plan)
    return SolveOutcome(result.status, result.objective, result.bound, sm.signal_plan(result.x),
                        result.x, score, result.nodes, elapsed, search_plan=plan)


# -- replay and reporting ----------------------------------------------------------


@dataclass
class LinkEmission:
    grams: float
    grid: MoskowitzGrid | None = None


def replay(scenario: Scenario, plan: SignalPlan) -> SimulationResult:
    return ltm_simulate(scenario.network, plan, scenario.demands, scenario.horizon)


def replay_emissions(
    scenario: Scenario,
    sim: SimulationResult,
    model: str | None = None,
    grid_dt: float = 1.0,
    cells: int = 40,
    keep_grids: bool = False,
) -> dict[str, LinkEmission]:
    """Grams emitted on every link by the replayed traffic.

    The Moskowitz surface of each link is sampled every ``grid_dt`` seconds
    on ``cells`` equal cells; speeds and accelerations come from the
    surface and feed the chosen per-vehicle model.
    """
    model = model or scenario.emission_model
    out = {}
    for lid, link in scenario.network.links.items():
        dx = link.length / cells
        grid = lax_hopf_moskowitz(link, sim.curves[lid], sim.dt, dx, grid_dt)
        rho, v = density_velocity_fields(grid, link.fd)
        a = acceleration_field(v, grid_dt, dx) if model == "modal" else None
        series = link_aer(rho, v, a, model, dx, scenario.speed_params, scenario.modal_params)
        grams = total_emission(series.aer[1:], grid_dt)
        out[lid] = LinkEmission(grams, grid if keep_grids else None)
    return out


def violation_pct(emission: float, cap: float) -> float:
    return max(0.0, (emission - cap) / cap) * 100.0


def max_flow_deviation(sm: SignalMilp, x: np.ndarray, sim: SimulationResult) -> float:
    """Largest gap (veh/s) between MILP flow variables and the replayed flows."""
    q_in, q_out = sm.flows(x)
    worst = 0.0
    for lid in sm.network.links:
        worst = max(worst, float(np.max(np.abs(q_in[lid] - sim.q_in[lid]), initial=0.0)),
                    float(np.max(np.abs(q_out[lid] - sim.q_out[lid]), initial=0.0)))
    return worst


def no_holding_violations(scenario: Scenario, plan: SignalPlan, sim: SimulationResult,
                          tol: float = 1e-6) -> int:
    """Green steps on which a signalized approach sends less than its junction allows."""
    from .lwr_core import junction_flows

    count = 0
    for jn in scenario.network.signalized:
        u = plan.controls[jn.id]
        for k in range(scenario.horizon):
            demands = [sim.demand[l][k] for l in jn.incoming]
            supplies = [sim.supply[l][k] for l in jn.outgoing]
            expected, _ = junction_flows(demands, supplies, jn.turning, u[:, k])
            for i, lid in enumerate(jn.incoming):
                if u[i, k] and sim.q_out[lid][k] < expected[i] - tol:
                    count += 1
    return count


@dataclass
class RunReport:
    scenario: str
    mode: str
    status: str
    objective: float
    bound: float
    emissions: dict[str, float]
    caps: dict[str, float]
    violations: dict[str, float]
    worst_case: dict[str, float]
    stops: dict[str, float]
    elapsed: float
    nodes: int = 0
    flow_deviation: float = math.nan
    holding_violations: int = 0
    message: str = ""
    plan: SignalPlan | None = None
    grids: dict[str, MoskowitzGrid] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def total_emission(self) -> float:
        return float(sum(self.emissions.values()))

    @property
    def feasible(self) -> bool:
        return self.plan is not None

    @property
    def exit_code(self) -> int:
        if self.status == "infeasible":
            return EXIT_INFEASIBLE
        if self.status == "limit" and not self.feasible:
            return EXIT_LIMIT
        return EXIT_OK

    def summary(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "status": self.status,
            "objective": None if math.isnan(self.objective) else self.objective,
            "bound": None if math.isnan(self.bound) else self.bound,
            "total_emission": self.total_emission if self.feasible else None,
            "emissions": self.emissions,
            "caps": self.caps,
            "violations_pct": self.violations,
            "worst_case": self.worst_case,
            "stops_per_vehicle": self.stops,
            "nodes": self.nodes,
            "elapsed_s": self.elapsed,
            "flow_deviation": None if math.isnan(self.flow_deviation) else self.flow_deviation,
            "holding_violations": self.holding_violations,
            "message": self.message,
            "notes": self.notes,
        }


def _worst_cases(scenario: Scenario, sim: SimulationResult, caps) -> dict[str, float]:
    uset = scenario.uncertainty
    if not caps or uset is None or uset.is_empty:
        return {}
    return {lid: worst_case_emission(uset, sim.curves[lid].occupancy()[1:], scenario.dt,
                                     GRAMS_PER_GH_SECOND) for lid in caps}


def _report(scenario, mode, sm, outcome, keep_grids, stop_trajectories, v_stop) -> RunReport:
    caps = dict(scenario.caps) if mode == "lwre" else {}
    if outcome.plan is None:
        notes = list(scenario.notes)
        worst = {}
        if outcome.search_plan is not None and caps:
            # diagnostics: how far the least-violating searched plan is from the caps
            worst = _worst_cases(scenario, replay(scenario, outcome.search_plan), caps)
            over = ", ".join(f"{lid}: {worst[lid]:.1f} > {caps[lid]:g}"
                             for lid in sorted(worst, key=_link_key) if worst[lid] > caps[lid])
            notes.append(f"closest searched plan exceeds robust caps on {over or 'no link'}")
        return RunReport(scenario.name, mode, outcome.status, math.nan, outcome.bound, {}, caps,
                         {}, worst, {}, outcome.elapsed, outcome.nodes, message=outcome.message,
                         notes=notes)
    sim = replay(scenario, outcome.plan)
    all_em = replay_emissions(scenario, sim, keep_grids=True)
    link_em = {lid: all_em[lid] for lid in scenario.report_links}
    emissions = {lid: e.grams for lid, e in link_em.items()}
    violations = {lid: violation_pct(all_em[lid].grams, cap) for lid, cap in caps.items()}
    worst = _worst_cases(scenario, sim, caps)
    stops = {lid: count_stops(e.grid, stop_trajectories, v_stop) for lid, e in link_em.items()}
    grids = {lid: e.grid for lid, e in link_em.items()} if keep_grids else {}
    return RunReport(
        scenario.name, mode, outcome.status, outcome.objective, outcome.bound, emissions, caps,
        violations, worst, stops, outcome.elapsed, outcome.nodes,
        flow_deviation=max_flow_deviation(sm, outcome.x, sim),
        holding_violations=no_holding_violations(scenario, outcome.plan, sim),
        message=outcome.message, plan=outcome.plan, grids=grids, notes=list(scenario.notes),
    )


def run_base(
    scenario: Scenario,
    config: SolveConfig | None = None,
    starts: list[SignalPlan] | None = None,
    keep_grids: bool = False,
    stop_trajectories: int = 50,
    v_stop: float = 0.1,
) -> RunReport:
    """Throughput-optimal signals without emission rows, replayed and scored for emissions."""
    sm = build_model(scenario, with_caps=False, config=config)
    outcome = solve_scenario_model(sm, config, starts)
    return _report(scenario, "base", sm, outcome, keep_grids, stop_trajectories, v_stop)


def run_lwre(
    scenario: Scenario,
    config: SolveConfig | None = None,
    starts: list[SignalPlan] | None = None,
    keep_grids: bool = False,
    stop_trajectories: int = 50,
    v_stop: float = 0.1,
) -> RunReport:
    """Signals optimized under robust emission caps on every capped link."""
    if scenario.uncertainty is None and scenario.caps:
        raise ConfigurationError("caps need a calibrated uncertainty set")
    sm = build_model(scenario, with_caps=True, config=config)
    outcome = solve_scenario_model(sm, config, starts)
    return _report(scenario, "lwre", sm, outcome, keep_grids, stop_trajectories, v_stop)


# -- stop counting ------------------------------------------------------------------


def trajectory_positions(grid: MoskowitzGrid, level: float) -> np.ndarray:
    """Position of vehicle ``level`` at every grid time; NaN before entry and after exit.

    The position is ``sup {x : N(t, x) >= level}``, interpolated linearly
    inside the cell where ``N`` drops below ``level``.
    """
    values = grid.values
    xs = grid.positions
    out = np.full(values.shape[0], np.nan)
    for i, row in enumerate(values):
        if row[0] < level or row[-1] >= level:
            continue
        j = int(np.flatnonzero(row >= level)[-1])
        hi, lo = row[j], row[j + 1]
        frac = 0.0 if hi == lo else (hi - level) / (hi - lo)
        out[i] = xs[j] + frac * (xs[j + 1] - xs[j])
    return out


def contour_levels(grid: MoskowitzGrid, n_trajectories: int) -> np.ndarray:
    """``n_trajectories`` equally spaced vehicle labels among those that entered the link."""
    total = float(grid.values[-1, 0])
    if total <= 0:
        return np.zeros(0)
    return (np.arange(n_trajectories) + 0.5) / n_trajectories * total


def count_stops(grid: MoskowitzGrid | None, n_trajectories: int = 50, v_stop: float = 0.1) -> float:
    """Average number of stops per traced vehicle.

    A stop is a maximal run of consecutive time steps during which the
    traced vehicle is inside the link and moves slower than ``v_stop``.
    """
    if v_stop <= 0:
        raise ConfigurationError("v_stop must be positive")
    if n_trajectories < 1:
        raise ConfigurationError("need at least one trajectory")
    if grid is None:
        return 0.0
    levels = contour_levels(grid, n_trajectories)
    if len(levels) == 0:
        return 0.0
    total = sum(trajectory_stops(grid, level, v_stop) for level in levels)
    return total / n_trajectories


def trajectory_stops(grid: MoskowitzGrid, level: float, v_stop: float = 0.1) -> int:
    """Stops of vehicle ``level``: maximal runs of steps inside the link below ``v_stop``."""
    pos = trajectory_positions(grid, level)
    speed = np.diff(pos) / grid.dt
    stopped = np.nan_to_num(speed, nan=np.inf) < v_stop
    starts = stopped & ~np.concatenate(([False], stopped[:-1]))
    return int(starts.sum())


def contour_polylines(grid: MoskowitzGrid, n_trajectories: int = 50) -> list[dict[str, Any]]:
    """Vehicle trajectories as ``(t, x)`` polylines for plotting."""
    lines = []
    for level in contour_levels(grid, n_trajectories):
        pos = trajectory_positions(grid, level)
        keep = ~np.isnan(pos)
        lines.append({
            "level": round(float(level), 6),
            "t": [round(float(t), 6) for t in grid.times[keep]],
            "x": [round(float(x), 6) for x in pos[keep]],
        })
    return lines
