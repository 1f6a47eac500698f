"""Per-vehicle emission rates and link-aggregate emission rates (AER).

Two hydrocarbon models are provided:

* the average-speed model ``e(v) = c0 exp(c1 v)`` in g/h per vehicle;
* the modal model, which maps instantaneous power demand ``Z`` (kW) to
  ``52.8 + 4.2 Z`` g/h per vehicle while the engine pulls and to the idle
  rate otherwise.

The speed model is evaluated on the numeric value of ``v`` in m/s by
default.  Over the free-flow range ``[0, 13.33]`` m/s this yields rates
between 26.3 and 30.0 g/h, the range the macroscopic calibration is built
on; ``mph_strict=True`` converts to miles per hour first.

A link's AER at time ``t_i`` integrates density times per-vehicle rate
over the link, ``AER_i = int rho(t_i, x) e(t_i, x) dx``, by the trapezoid
rule on the Moskowitz grid; the same rule gives the occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

MPS_TO_MPH = 3600.0 / 1609.344
MPS_TO_KMH = 3.6
GRAVITY = 9.81
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class SpeedEmissionParams:
    c0: float = 26.3009
    c1: float = 0.009928
    mph_strict: bool = False

    def __post_init__(self) -> None:
        if not self.c0 > 0:
            raise ConfigurationError("c0 must be positive")


@dataclass(frozen=True)
class ModalEmissionParams:
    mass: float = 1200.0
    theta: float = 0.0
    idle_rate: float = 52.8
    slope: float = 4.2

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ConfigurationError("vehicle mass must be positive")
        if not self.idle_rate > 0:
            raise ConfigurationError("idle rate must be positive")


@dataclass
class AerSeries:
    """Aggregate emission rate (g/h) and occupancy (veh) per time level."""

    aer: np.ndarray
    occupancy: np.ndarray

    def __post_init__(self) -> None:
        self.aer = np.asarray(self.aer, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=float)
        if self.aer.shape != self.occupancy.shape:
            raise ConfigurationError("AER and occupancy series differ in length")
        if np.any(self.aer < 0) or np.any(self.occupancy < 0):
            raise DomainError("AER and occupancy must be nonnegative")


def speed_rate(v, params: SpeedEmissionParams | None = None):
    """Average-speed hydrocarbon rate (g/h per vehicle) at speed ``v`` (m/s)."""
    params = params or SpeedEmissionParams()
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise DomainError("speed must be nonnegative")
    value = v * MPS_TO_MPH if params.mph_strict else v
    out = params.c0 * np.exp(params.c1 * value)
    return float(out) if out.ndim == 0 else out


def power_demand(v_kmh, a_kmhps, params: ModalEmissionParams | None = None):
    """Instantaneous power demand ``Z`` in kW.

    ``v_kmh`` is the speed in km/h and ``a_kmhps`` the acceleration in
    km/h per second.  Rolling, drag and cubic aerodynamic terms plus the
    inertial and grade term ``(m / 1000) (v / 3.6) (a / 3.6 + g sin theta)``.
    """
    params = params or ModalEmissionParams()
    v = np.asarray(v_kmh, dtype=float)
    a = np.asarray(a_kmhps, dtype=float)
    if np.any(v < 0):
        raise DomainError("speed must be nonnegative")
    z = (0.04 * v + 0.5e-3 * v**2 + 10.8e-6 * v**3
         + params.mass / 1000.0 * (v / 3.6) * (a / 3.6 + GRAVITY * np.sin(params.theta)))
    return float(z) if z.ndim == 0 else z


def modal_rate(z, params: ModalEmissionParams | None = None):
    """Modal hydrocarbon rate (g/h per vehicle) for power demand ``z`` (kW)."""
    params = params or ModalEmissionParams()
    z = np.asarray(z, dtype=float)
    out = np.where(z > 0, params.idle_rate + params.slope * z, params.idle_rate)
    return float(out) if out.ndim == 0 else out


def _trapezoid_weights(n_points: int, dx: float) -> np.ndarray:
    w = np.full(n_points, dx)
    if n_points > 1:
        w[0] = w[-1] = dx / 2.0
    return w


def per_vehicle_rates(v_field, a_field, model: str, speed_params=None, modal_params=None):
    """Rate field (g/h per vehicle) for ``model`` in ``{'speed', 'modal'}``; fields in SI units."""
    v = np.asarray(v_field, dtype=float)
    if model == "speed":
        return speed_rate(v, speed_params)
    if model == "modal":
        a = np.asarray(a_field, dtype=float)
        if a.shape != v.shape:
            raise ConfigurationError("speed and acceleration fields differ in shape")
        z = power_demand(v * MPS_TO_KMH, a * MPS_TO_KMH, modal_params)
        return modal_rate(z, modal_params)
    raise ConfigurationError(f"unknown emission model {model!r}")


def link_aer(
    rho_field,
    v_field,
    a_field,
    model: str,
    dx: float,
    speed_params: SpeedEmissionParams | None = None,
    modal_params: ModalEmissionParams | None = None,
) -> AerSeries:
    """Integrate density times per-vehicle rate along the link at every time level.

    Fields are indexed ``[time, position]`` on a uniform grid with spacing
    ``dx``; ``a_field`` may be ``None`` for the speed model.
    """
    rho = np.asarray(rho_field, dtype=float)
    v = np.asarray(v_field, dtype=float)
    if rho.ndim != 2 or rho.shape != v.shape:
        raise ConfigurationError("density and speed fields must share one 2-D grid")
    if a_field is None:
        if model == "modal":
            raise ConfigurationError("the modal model needs an acceleration field")
        a_field = np.zeros_like(v)
    elif np.shape(a_field) != rho.shape:
        raise ConfigurationError("acceleration field does not match the grid")
    rate = per_vehicle_rates(v, a_field, model, speed_params, modal_params)
    w = _trapezoid_weights(rho.shape[1], dx)
    occupancy = rho @ w
    aer = (rho * rate) @ w
    return AerSeries(aer, occupancy)


def total_emission(aer: AerSeries | np.ndarray, dt: float) -> float:
    """Grams emitted over the series: ``sum AER_i dt / 3600`` with ``dt`` in seconds."""
    values = aer.aer if isinstance(aer, AerSeries) else np.asarray(aer, dtype=float)
    return float(np.sum(values) * dt / SECONDS_PER_HOUR)
