"""Budget uncertainty sets for the coefficients of macroscopic emission relations.

A set of order ``L`` bounds the time-indexed coefficients ``a_{l,k}``
(``l = 0..L``, ``k = 1..N``) by the box ``lower[l] <= a_{l,k} <= upper[l]``
and the budget ``sum_k sum_{l>=1} a_{l,k} <= N * sum_{l>=1} upper[l] / sigma``.
The zeroth-order coefficients are outside the budget, so their worst case
is always ``upper[0]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UncertaintySetError


@dataclass(frozen=True)
class UncertaintySet:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    sigma: float = 1.0

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or len(lo) < 2:
            raise UncertaintySetError("need matching lower/upper bounds for orders 0..L, L >= 1")
        if any(not np.isfinite(v) for v in lo + hi):
            raise UncertaintySetError("bounds must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise UncertaintySetError("every lower bound must not exceed its upper bound")
        if not self.sigma >= 1.0:
            raise UncertaintySetError("sigma must be >= 1")
        total_lo = sum(lo)
        if total_lo > 0 and self.sigma > sum(hi) / total_lo * (1 + 1e-12):
            raise UncertaintySetError(
                f"sigma = {self.sigma:g} exceeds sum(U)/sum(L) = {sum(hi) / total_lo:g}"
            )
        if self.is_empty:
            warnings.warn(
                f"uncertainty set is empty for sigma = {self.sigma:g}: the budget "
                "lies below the lower-bound mass, so robust rows built from it "
                "never bind",
                stacklevel=2,
            )

    @classmethod
    def affine(cls, l0: float, u0: float, l1: float, u1: float, sigma: float = 1.0):
        return cls((l0, l1), (u0, u1), sigma)

    @property
    def degree(self) -> int:
        return len(self.lower) - 1

    @property
    def budget_per_step(self) -> float:
        """``sum_{l>=1} upper[l] / sigma``; the budget over ``N`` steps is ``N`` times this."""
        return sum(self.upper[1:]) / self.sigma

    @property
    def is_empty(self) -> bool:
        """True when the budget cannot accommodate the lower bounds of the first-order terms."""
        return sum(self.lower[1:]) > self.budget_per_step * (1 + 1e-12)

    @property
    def sigma_max(self) -> float:
        total_lo = sum(self.lower)
        return np.inf if total_lo <= 0 else sum(self.upper) / total_lo

    def with_sigma(self, sigma: float) -> "UncertaintySet":
        return UncertaintySet(self.lower, self.upper, sigma)


@dataclass(frozen=True)
class PiecewiseUncertaintySet:
    """Per-piece affine bounds for a piecewise-affine relation.

    ``shape='convex'`` couples the first-order coefficients of all pieces
    through one budget with ``sigma``; ``shape='concave'`` keeps the pieces
    independent, each with its own ``sigma`` carried by the piece set.
    """

    pieces: tuple[UncertaintySet, ...]
    shape: str = "convex"
    sigma: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise UncertaintySetError("need at least one piece")
        if self.shape not in ("convex", "concave"):
            raise UncertaintySetError(f"unknown shape {self.shape!r}")
        if any(p.degree != 1 for p in self.pieces):
            raise UncertaintySetError("pieces must be affine")
        if self.shape == "convex" and not self.sigma >= 1.0:
            raise UncertaintySetError("sigma must be >= 1")
        if self.shape == "convex" and self.is_empty:
            raise UncertaintySetError("shared budget lies below the pieces' lower-bound mass")

    @property
    def shared_budget_per_step(self) -> float:
        return sum(p.upper[1] for p in self.pieces) / self.sigma

    @property
    def is_empty(self) -> bool:
        return sum(p.lower[1] for p in self.pieces) > self.shared_budget_per_step * (1 + 1e-12)


def worst_case_emission(
    uset: UncertaintySet, occupancies, dt: float, time_scale: float = 1.0
) -> float:
    """Inner maximum of ``sum_k sum_l a_{l,k} N_k^l h`` over the set, ``h = dt * time_scale``.

    Solved greedily: start every coefficient at its lower bound, then spend
    the remaining budget on the first-order-and-higher terms with the
    largest positive weights.  Returns ``-inf`` for an empty set.
    """
    occ = np.asarray(occupancies, dtype=float)
    n = len(occ)
    h = dt * time_scale
    if uset.is_empty:
        return -np.inf
    total = n * uset.upper[0] * h
    weights = []
    bounds = []
    for l in range(1, uset.degree + 1):
        for val in occ:
            weights.append(val**l * h)
            bounds.append((uset.lower[l], uset.upper[l]))
    weights = np.array(weights)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    total += float(weights @ lo)
    remaining = n * uset.budget_per_step - lo.sum()
    for idx in np.argsort(-weights, kind="stable"):
        if weights[idx] <= 0 or remaining <= 0:
            break
        step = min(hi[idx] - lo[idx], remaining)
        total += step * weights[idx]
        remaining -= step
    return total
