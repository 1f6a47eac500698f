"""A small mixed-integer linear programming IR.

Variables are addressed by integer index; rows keep sparse coefficient
dictionaries.  Each row carries a ``tag`` naming the constraint family it
belongs to, which is what the provenance export reports.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

from .errors import ModelError

CONTINUOUS = "continuous"
BINARY = "binary"
INTEGER = "integer"
SENSES = ("<=", "=", ">=")


@dataclass
class Variable:
    name: str
    kind: str = CONTINUOUS
    lb: float = 0.0
    ub: float = math.inf

    @property
    def is_integer(self) -> bool:
        return self.kind in (BINARY, INTEGER)


@dataclass
class Row:
    name: str
    coeffs: dict[int, float]
    sense: str
    rhs: float
    tag: str = ""


class LinExpr:
    """Sparse affine expression ``sum_i c_i x_i + constant``."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | None = None, constant: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.constant = float(constant)

    @classmethod
    def var(cls, index: int, coef: float = 1.0) -> "LinExpr":
        return cls({index: coef})

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.constant)

    def add(self, index: int, coef: float) -> "LinExpr":
        """In-place ``self += coef * x[index]``; returns self."""
        if coef:
            self.terms[index] = self.terms.get(index, 0.0) + coef
        return self

    def iadd(self, other: "LinExpr | float", scale: float = 1.0) -> "LinExpr":
        """In-place ``self += scale * other``; returns self."""
        if isinstance(other, LinExpr):
            for i, c in other.terms.items():
                self.terms[i] = self.terms.get(i, 0.0) + scale * c
            self.constant += scale * other.constant
        else:
            self.constant += scale * float(other)
        return self

    def __add__(self, other):
        return self.copy().iadd(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy().iadd(other, -1.0)

    def __rsub__(self, other):
        return (self * -1.0).iadd(other)

    def __mul__(self, scalar: float) -> "LinExpr":
        return LinExpr({i: c * scalar for i, c in self.terms.items()}, self.constant * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value(self, x: np.ndarray) -> float:
        return self.constant + sum(c * x[i] for i, c in self.terms.items())

    def __repr__(self) -> str:
        return f"LinExpr({self.terms!r}, {self.constant!r})"


@dataclass
class MilpModel:
    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    sense: str = "max"
    objective_constant: float = 0.0
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    # -- construction -----------------------------------------------------
    def add_var(
        self, name: str, kind: str = CONTINUOUS, lb: float = 0.0, ub: float = math.inf
    ) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if kind not in (CONTINUOUS, BINARY, INTEGER):
            raise ModelError(f"unknown variable kind {kind!r}")
        if lb > ub:
            raise ModelError(f"variable {name!r}: lb {lb} > ub {ub}")
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        self._index[name] = len(self.variables) - 1
        return len(self.variables) - 1

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def has_var(self, name: str) -> bool:
        return name in self._index

    def add_row(
        self,
        expr: LinExpr | Mapping[int, float],
        sense: str,
        rhs: float = 0.0,
        name: str | None = None,
        tag: str = "",
    ) -> int:
        """Add ``expr sense rhs``; the constant of a ``LinExpr`` moves to the right-hand side."""
        if sense not in SENSES:
            raise ModelError(f"bad sense {sense!r}")
        if isinstance(expr, LinExpr):
            coeffs, rhs = expr.terms, rhs - expr.constant
        else:
            coeffs = dict(expr)
        n = len(self.variables)
        clean = {}
        for i, c in coeffs.items():
            if not 0 <= i < n:
                raise ModelError(f"row {name!r} references undeclared variable {i}")
            if c != 0.0:
                clean[int(i)] = float(c)
        name = name or f"r{len(self.rows)}"
        self.rows.append(Row(name, clean, sense, float(rhs), tag))
        return len(self.rows) - 1

    def set_objective(self, coeffs: Mapping[int, float] | LinExpr, sense: str = "max") -> None:
        if sense not in ("max", "min"):
            raise ModelError(f"bad objective sense {sense!r}")
        if isinstance(coeffs, LinExpr):
            self.objective_constant = coeffs.constant
            coeffs = coeffs.terms
        self.objective = {int(i): float(c) for i, c in coeffs.items() if c != 0.0}
        self.sense = sense

    def copy(self) -> "MilpModel":
        return copy.deepcopy(self)

    # -- inspection -------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def integer_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.is_integer]

    def census(self) -> dict[str, int]:
        """Counts of variables by kind and of rows by tag."""
        out: dict[str, int] = {}
        for v in self.variables:
            out[f"var:{v.kind}"] = out.get(f"var:{v.kind}", 0) + 1
        for r in self.rows:
            out[f"row:{r.tag}"] = out.get(f"row:{r.tag}", 0) + 1
        return out

    def validate(self) -> None:
        if not self.variables:
            raise ModelError("model has no variables")
        n = self.n_vars
        for r in self.rows:
            for i in r.coeffs:
                if not 0 <= i < n:
                    raise ModelError(f"row {r.name} references undeclared variable {i}")
        for v in self.variables:
            if v.kind == BINARY and (v.lb < 0 or v.ub > 1):
                raise ModelError(f"binary {v.name} must have bounds within [0, 1]")

    def objective_value(self, x: np.ndarray) -> float:
        return self.objective_constant + sum(c * x[i] for i, c in self.objective.items())

    def max_violation(self, x: np.ndarray) -> float:
        """Largest bound or row violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for i, v in enumerate(self.variables):
            worst = max(worst, v.lb - x[i], x[i] - v.ub)
        for r in self.rows:
            lhs = sum(c * x[i] for i, c in r.coeffs.items())
            if r.sense == "<=":
                worst = max(worst, lhs - r.rhs)
            elif r.sense == ">=":
                worst = max(worst, r.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - r.rhs))
        return worst

    def to_arrays(self):
        """Sparse standard data ``(c, A, lhs_lo, lhs_hi, lb, ub, integrality)``.

        Rows are expressed as ``lhs_lo <= A x <= lhs_hi``; ``c`` is for
        minimization (negated when the model maximizes).
        """
        n, m = self.n_vars, self.n_rows
        c = np.zeros(n)
        for i, v in self.objective.items():
            c[i] = v
        if self.sense == "max":
            c = -c
        data, ri, ci = [], [], []
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        for k, r in enumerate(self.rows):
            for i, v in r.coeffs.items():
                data.append(v)
                ri.append(k)
                ci.append(i)
            if r.sense in ("<=", "="):
                hi[k] = r.rhs
            if r.sense in (">=", "="):
                lo[k] = r.rhs
        a = sparse.csr_matrix((data, (ri, ci)), shape=(m, n))
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        integrality = np.array([1 if v.is_integer else 0 for v in self.variables])
        return c, a, lo, hi, lb, ub, integrality

    def fix(self, values: Mapping[int, float]) -> "MilpModel":
        """Copy of the model with the given variables fixed."""
        out = self.copy()
        for i, val in values.items():
            out.variables[i].lb = out.variables[i].ub = float(val)
        return out

    def names(self, indices: Iterable[int]) -> list[str]:
        return [self.variables[i].name for i in indices]
