"""Monte-Carlo link emissions and the macroscopic occupancy/AER relations fitted to them.

Each run drives one link with random signal-like boundary conditions:
piecewise-constant arrival demand upstream and piecewise-constant supply
downstream, each behind an independent red/green signal.  A red light
sets the capacity of its boundary to zero.  Arrivals held by a red
entrance wait in a point queue and discharge into the link once it
turns green, so the upstream signal delays traffic rather than deleting
it.  The link is advanced with the link transmission scheme at a
one-second step, the Moskowitz surface is rebuilt from the boundary
counts, and every time level after a burn-in yields one
``(occupancy, AER)`` sample.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .emissions import ModalEmissionParams, SpeedEmissionParams, link_aer
from .errors import ConfigurationError, DomainError, UncertaintySetError
from .lwr_core import (
    CumulativeCurves,
    Link,
    acceleration_field,
    density_velocity_fields,
    lax_hopf_moskowitz,
)
from .uncertainty import UncertaintySet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmissionSample:
    lo: float
    aer: float


@dataclass(frozen=True)
class AffineRelation:
    a1: float
    a0: float
    r2: float

    def __call__(self, lo):
        return self.a1 * np.asarray(lo, dtype=float) + self.a0


@dataclass(frozen=True)
class PiecewiseAffineRelation:
    """``max`` (convex) or ``min`` (concave) of affine pieces ``b1 * lo + b0``."""

    pieces: tuple[tuple[float, float], ...]
    shape: str = "convex"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple((float(a), float(b)) for a, b in self.pieces))
        if not self.pieces:
            raise ConfigurationError("a piecewise relation needs at least one piece")
        if self.shape not in ("convex", "concave"):
            raise ConfigurationError(f"unknown shape {self.shape!r}")

    def __call__(self, lo):
        x = np.asarray(lo, dtype=float)
        values = np.stack([b1 * x + b0 for b1, b0 in self.pieces])
        out = values.max(axis=0) if self.shape == "convex" else values.min(axis=0)
        return float(out) if out.ndim == 0 else out


@dataclass
class BoundaryScenario:
    """Per-step boundary data for one link.

    ``demand`` is the arrival rate (veh/s) upstream of the entrance
    signal, ``supply`` the rate the exit may discharge (already zero on
    red), and ``entry_gate`` the entrance signal (1 green, 0 red).
    """

    demand: np.ndarray
    supply: np.ndarray
    entry_gate: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.demand = np.asarray(self.demand, dtype=float)
        self.supply = np.asarray(self.supply, dtype=float)
        if self.entry_gate is None:
            self.entry_gate = np.ones_like(self.demand)
        self.entry_gate = np.asarray(self.entry_gate, dtype=float)
        if not len(self.demand) == len(self.supply) == len(self.entry_gate):
            raise ConfigurationError("boundary profiles differ in length")


@dataclass(frozen=True)
class MonteCarloConfig:
    dt: float = 1.0
    steps: int = 410
    burn_in: float = 60.0
    cells: int = 40
    phase_range: tuple[float, float] = (10.0, 40.0)
    level_range: tuple[float, float] = (10.0, 40.0)

    def __post_init__(self) -> None:
        if self.steps < 1 or self.cells < 2 or self.dt <= 0:
            raise ConfigurationError("need steps >= 1, cells >= 2 and dt > 0")
        if self.burn_in < 0 or self.burn_in >= self.steps * self.dt:
            raise ConfigurationError("burn-in must be shorter than the run")
        for lo, hi in (self.phase_range, self.level_range):
            if not 0 < lo <= hi:
                raise ConfigurationError("duration ranges need 0 < low <= high")


def _holding_profile(rng, n: int, dt: float, durations, draw) -> np.ndarray:
    """Piecewise-constant profile over ``n`` steps; each segment's length and value are random."""
    out = np.empty(n)
    t_step = 0
    while t_step < n:
        length = max(1, int(round(rng.uniform(*durations) / dt)))
        out[t_step:t_step + length] = draw()
        t_step += length
    return out


def _gate(rng, n: int, dt: float, durations, all_red: bool) -> np.ndarray:
    if all_red:
        return np.zeros(n)
    state = [float(rng.integers(0, 2))]

    def flip() -> float:
        state[0] = 1.0 - state[0]
        return state[0]

    return _holding_profile(rng, n, dt, durations, flip)


def random_boundary_scenario(
    rng_seed,
    link: Link,
    horizon: int,
    phase_range: tuple[float, float] = (10.0, 40.0),
    dt: float = 1.0,
    level_range: tuple[float, float] = (10.0, 40.0),
    all_red_downstream: bool = False,
) -> BoundaryScenario:
    """Random gated demand and supply profiles over ``horizon`` steps of ``dt``.

    Levels are uniform on ``[0, C]`` and held for durations uniform on
    ``level_range`` seconds; each boundary has its own red/green gate with
    phase durations uniform on ``phase_range`` seconds.  The exit gate is
    folded into ``supply``; the entrance gate is kept separate because it
    holds arrivals back instead of discarding them.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be positive")
    rng = np.random.default_rng(rng_seed)
    cap = link.capacity

    def level() -> float:
        return float(rng.uniform(0.0, cap))

    demand = _holding_profile(rng, horizon, dt, level_range, level)
    supply = _holding_profile(rng, horizon, dt, level_range, level)
    entry_gate = _gate(rng, horizon, dt, phase_range, False)
    supply *= _gate(rng, horizon, dt, phase_range, all_red_downstream)
    return BoundaryScenario(demand, supply, entry_gate)


def simulate_link(link: Link, scenario: BoundaryScenario, dt: float) -> CumulativeCurves:
    """Advance one link under the boundary scenario; returns its cumulative counts.

    Arrivals join a point queue in front of the entrance, which releases
    ``min(receiving flow, queue / dt)`` while the entrance is green.
    """
    n = len(scenario.demand)
    backlog = 0.0
    up = np.zeros(n + 1)
    down = np.zeros(n + 1)
    cap = link.capacity
    storage = link.storage
    df, db = link.delta_f, link.delta_b
    for j in range(1, n + 1):
        space = (down[j - db] if j >= db else 0.0) + storage - up[j - 1]
        avail = (up[j - df] if j >= df else 0.0) - down[j - 1]
        receive = min(cap, max(space, 0.0) / dt)
        send = min(cap, max(avail, 0.0) / dt)
        backlog += dt * scenario.demand[j - 1]
        inflow = scenario.entry_gate[j - 1] * min(receive, backlog / dt)
        backlog -= dt * inflow
        up[j] = up[j - 1] + dt * inflow
        down[j] = down[j - 1] + dt * min(send, scenario.supply[j - 1])
    return CumulativeCurves(up, down)


def _run_samples(link, model, seed, config, speed_params, modal_params, demand_level):
    scenario = random_boundary_scenario(
        seed, link, config.steps, config.phase_range, config.dt, config.level_range
    )
    if demand_level is not None:
        scenario.demand[:] = demand_level
    curves = simulate_link(link, scenario, config.dt)
    dx = link.length / config.cells
    grid = lax_hopf_moskowitz(link, curves, config.dt, dx)
    rho, v = density_velocity_fields(grid, link.fd)
    a = acceleration_field(v, config.dt, dx) if model == "modal" else None
    series = link_aer(rho, v, a, model, dx, speed_params, modal_params)
    first = int(round(config.burn_in / config.dt)) + 1
    return series.occupancy[first:], series.aer[first:]


def simulate_samples(
    n_runs: int,
    link: Link,
    model: str = "speed",
    rng_seed: int = 0,
    config: MonteCarloConfig | None = None,
    speed_params: SpeedEmissionParams | None = None,
    modal_params: ModalEmissionParams | None = None,
    demand_level: float | None = None,
) -> list[EmissionSample]:
    """One ``(occupancy, AER)`` sample per time step after the burn-in of every run.

    Run ``r`` uses the ``r``-th child of ``SeedSequence(rng_seed)``, so the
    result depends only on the seed and the run count.  ``demand_level``
    replaces the random inflow demand by a constant (0 gives an empty link).
    """
    if n_runs <= 0:
        raise ConfigurationError("n_runs must be positive")
    if model not in ("speed", "modal"):
        raise ConfigurationError(f"unknown emission model {model!r}")
    config = config or MonteCarloConfig()
    if demand_level is not None and not 0 <= demand_level <= link.capacity:
        raise DomainError("demand level must lie in [0, C]")
    samples: list[EmissionSample] = []
    for child in np.random.SeedSequence(rng_seed).spawn(n_runs):
        lo, aer = _run_samples(link, model, child, config, speed_params, modal_params,
                               demand_level)
        samples.extend(EmissionSample(float(o), float(e)) for o, e in zip(lo, aer))
    log.info("generated %d samples from %d runs", len(samples), n_runs)
    return samples


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2:
        return np.asarray(samples[0], dtype=float), np.asarray(samples[1], dtype=float)
    lo = np.array([s.lo for s in samples], dtype=float)
    aer = np.array([s.aer for s in samples], dtype=float)
    return lo, aer


def _ols(lo: np.ndarray, aer: np.ndarray) -> tuple[float, float]:
    if len(lo) < 2 or np.ptp(lo) == 0:
        raise DomainError("need at least two samples with distinct occupancies")
    a1, a0 = np.polyfit(lo, aer, 1)
    return float(a1), float(a0)


def fit_affine(samples) -> AffineRelation:
    """Ordinary least squares ``AER = a1 * LO + a0`` with ``R^2 = 1 - SS_res / SS_tot``."""
    lo, aer = samples_to_arrays(samples)
    a1, a0 = _ols(lo, aer)
    ss_res = float(np.sum((aer - (a1 * lo + a0)) ** 2))
    ss_tot = float(np.sum((aer - aer.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return AffineRelation(a1, a0, min(1.0, max(0.0, r2)))


def band_coverage(samples, l0: float, u0: float, l1: float, u1: float) -> float:
    """Fraction of samples with ``l1 LO + l0 <= AER <= u1 LO + u0``."""
    lo, aer = samples_to_arrays(samples)
    if len(lo) == 0:
        raise DomainError("no samples")
    inside = (aer >= l1 * lo + l0) & (aer <= u1 * lo + u0)
    return float(np.mean(inside))


def calibrate_uncertainty(
    samples, l0: float, u0: float, l1: float, u1: float, sigma: float = 1.0
) -> tuple[UncertaintySet, float]:
    """Uncertainty set for the affine relation plus the share of samples inside its band.

    Samples outside the band are kept and only counted; a share below 0.9
    triggers a warning.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        uset = UncertaintySet.affine(l0, u0, l1, u1, sigma)
    if uset.is_empty:
        raise UncertaintySetError(
            f"sigma = {sigma:g} leaves no room for the first-order lower bound "
            f"(largest admissible sigma is {u1 / l1:g})"
        )
    coverage = band_coverage(samples, l0, u0, l1, u1)
    if coverage < 0.9:
        warnings.warn(f"band covers only {coverage:.1%} of the samples", stacklevel=2)
    return uset, coverage


def _envelope(pieces: list[tuple[float, float]], xs: np.ndarray, shape: str):
    """Drop pieces that are never active on ``xs`` for the max (convex) or min (concave)."""
    values = np.stack([b1 * xs + b0 for b1, b0 in pieces])
    active = values.argmax(axis=0) if shape == "convex" else values.argmin(axis=0)
    keep = sorted(set(int(i) for i in active))
    return [pieces[i] for i in keep]


def fit_piecewise(samples, n_pieces: int, shape: str = "convex") -> PiecewiseAffineRelation:
    """Fit one OLS line per equal-width occupancy interval, then keep the envelope.

    The convex form is the maximum of the kept pieces and the concave form
    the minimum; pieces never active on the sampled range are discarded.
    """
    if n_pieces < 1:
        raise ConfigurationError("n_pieces must be >= 1")
    if shape not in ("convex", "concave"):
        raise ConfigurationError(f"unknown shape {shape!r}")
    lo, aer = samples_to_arrays(samples)
    if n_pieces == 1:
        rel = fit_affine((lo, aer))
        return PiecewiseAffineRelation(((rel.a1, rel.a0),), shape)
    if len(lo) == 0 or np.ptp(lo) == 0:
        raise DomainError("need samples spanning a range of occupancies")
    edges = np.linspace(lo.min(), lo.max(), n_pieces + 1)
    slot = np.clip(np.searchsorted(edges, lo, side="right") - 1, 0, n_pieces - 1)
    pieces = []
    for m in range(n_pieces):
        mask = slot == m
        if mask.sum() < 2 or np.ptp(lo[mask]) == 0:
            raise DomainError(f"interval {m} holds too few distinct samples to fit")
        pieces.append(_ols(lo[mask], aer[mask]))
    xs = np.unique(lo)
    return PiecewiseAffineRelation(tuple(_envelope(pieces, xs, shape)), shape)
