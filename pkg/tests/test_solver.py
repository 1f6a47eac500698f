from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwre.errors import ConfigurationError, ModelError, MpsParseError
from lwre.model import BINARY, MilpModel
from lwre.mps import export_lp, export_mps, format_number, import_mps, mps_text, parse_mps
from lwre.solver.bnb import BnbConfig, solve_milp
from lwre.solver.external import find_cbc, solve_with_cbc
from lwre.solver.highs_lp import solve_lp_highs
from lwre.solver.simplex import solve_lp

from oracles import enumerate_binaries


def tiny_lp() -> MilpModel:
    m = MilpModel("tiny")
    x, y = m.add_var("x"), m.add_var("y")
    m.add_row({x: 1.0}, "<=", 1.0)
    m.add_row({y: 1.0}, "<=", 2.0)
    m.set_objective({x: 1.0, y: 1.0}, "max")
    return m


def knapsack() -> MilpModel:
    m = MilpModel("knap")
    a, b, c = (m.add_var(n, BINARY) for n in "abc")
    m.add_row({a: 2.0, b: 3.0, c: 1.0}, "<=", 4.0)
    m.set_objective({a: 5.0, b: 4.0, c: 3.0}, "max")
    return m


def random_milp(seed: int, n_bin: int, n_cont: int = 2, n_rows: int = 4) -> MilpModel:
    rng = np.random.default_rng(seed)
    m = MilpModel(f"rand{seed}")
    idx = [m.add_var(f"b{i}", BINARY) for i in range(n_bin)]
    idx += [m.add_var(f"c{i}", lb=0.0, ub=float(rng.uniform(1, 5))) for i in range(n_cont)]
    for r in range(n_rows):
        coeffs = {i: float(rng.integers(-3, 6)) for i in idx if rng.random() < 0.7}
        m.add_row(coeffs, "<=", float(rng.integers(2, 10)))
    m.set_objective({i: float(rng.integers(-2, 8)) for i in idx}, str(rng.choice(["max", "min"])))
    return m


class TestSimplex:
    def test_box_lp(self):
        sol = solve_lp(tiny_lp())
        assert sol.status == "optimal" and sol.objective == pytest.approx(3.0)
        assert np.allclose(sol.x, [1.0, 2.0])

    def test_vertex_lp(self):
        m = MilpModel()
        x, y = m.add_var("x"), m.add_var("y")
        m.add_row({x: 1, y: 1}, "<=", 4)
        m.add_row({x: 1, y: 3}, "<=", 6)
        m.set_objective({x: 3, y: 2}, "max")
        sol = solve_lp(m)
        assert sol.objective == pytest.approx(12.0) and np.allclose(sol.x, [4.0, 0.0])

    def test_contradiction(self):
        m = MilpModel()
        x = m.add_var("x", lb=-math.inf)
        m.add_row({x: 1}, "<=", 0)
        m.add_row({x: 1}, ">=", 1)
        assert solve_lp(m).status == "infeasible"

    def test_unbounded(self):
        m = MilpModel()
        x = m.add_var("x")
        m.set_objective({x: 1.0}, "max")
        assert solve_lp(m).status == "unbounded"

    def test_equality_and_free_variables(self):
        m = MilpModel()
        x, y = m.add_var("x", lb=-math.inf), m.add_var("y", lb=-5, ub=5)
        m.add_row({x: 1, y: 1}, "=", 2)
        m.set_objective({x: 1, y: -1}, "min")
        sol = solve_lp(m)
        assert sol.objective == pytest.approx(-8.0) and np.allclose(sol.x, [-3.0, 5.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_strong_duality_and_agreement(self, seed):
        m = random_milp(seed, 0, n_cont=5, n_rows=5)
        sol = solve_lp(m)
        ref = solve_lp_highs(m)
        assert sol.status == ref.status
        if sol.ok:
            assert sol.objective == pytest.approx(ref.objective, abs=1e-6)
            assert sol.dual_objective == pytest.approx(sol.objective, abs=1e-6)
            assert m.max_violation(sol.x) <= 1e-7


class TestBranchAndBound:
    def test_single_binary(self):
        m = MilpModel()
        x = m.add_var("x", BINARY)
        m.add_row({x: 2.0}, "<=", 3.0)
        m.set_objective({x: 1.0})
        assert solve_milp(m).objective == pytest.approx(1.0)

    def test_knapsack(self):
        # enumeration of the 8 assignments: {a, c} weighs 3 and is worth 8; {a, b} is overweight
        sol = solve_milp(knapsack())
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(8.0)
        assert np.allclose(sol.x, [1.0, 0.0, 1.0])
        assert enumerate_binaries(knapsack()) == pytest.approx(8.0)

    def test_integral_root_needs_no_branching(self):
        sol = solve_milp(tiny_lp())
        assert sol.status == "optimal" and sol.extra["branched"] == 0

    def test_infeasible(self):
        m = MilpModel()
        x = m.add_var("x", BINARY)
        m.add_row({x: 2.0}, "=", 1.0)
        assert solve_milp(m).status == "infeasible"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_matches_enumeration(self, seed, n_bin):
        m = random_milp(seed, n_bin)
        sol = solve_milp(m)
        ref = enumerate_binaries(m)
        if ref is None:
            assert sol.status == "infeasible"
        else:
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(ref, abs=1e-6)

    def test_twelve_binaries(self):
        m = random_milp(7, 12, n_rows=6)
        assert solve_milp(m).objective == pytest.approx(enumerate_binaries(m), abs=1e-6)

    def test_engines_agree(self):
        m = random_milp(3, 10, n_rows=6)
        a = solve_milp(m, BnbConfig(engine="dense"))
        b = solve_milp(m, BnbConfig(engine="highs"))
        assert a.objective == pytest.approx(b.objective, abs=1e-7)

    def test_deterministic(self):
        m = random_milp(11, 10, n_rows=6)
        a, b = solve_milp(m), solve_milp(m)
        assert np.array_equal(a.x, b.x) and a.nodes == b.nodes

    def test_node_limit(self):
        sol = solve_milp(random_milp(5, 12, n_rows=6), BnbConfig(node_limit=1))
        assert sol.status in ("limit", "optimal")

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            BnbConfig(gap=-1)
        with pytest.raises(ConfigurationError):
            BnbConfig(branching="pseudocost")


class TestMps:
    def test_idempotent_roundtrip(self, tmp_path):
        m = random_milp(2, 4)
        first = tmp_path / "a.mps"
        second = tmp_path / "b.mps"
        export_mps(m, first)
        export_mps(import_mps(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_roundtrip_keeps_optimum(self, tmp_path):
        m = knapsack()
        export_mps(m, tmp_path / "k.mps")
        assert solve_milp(import_mps(tmp_path / "k.mps")).objective == pytest.approx(8.0)

    def test_fixed_columns(self):
        for line in mps_text(tiny_lp()).splitlines():
            if line.startswith("    "):
                assert len(line) <= 61
                assert line[4:12].strip() and line[3] == " "

    def test_malformed_rhs(self):
        text = mps_text(tiny_lp()).replace("RHS       R0000001             1",
                                           "RHS       R0000001           abc")
        with pytest.raises(MpsParseError, match="line 13"):
            parse_mps(text)

    def test_unknown_section(self):
        with pytest.raises(MpsParseError):
            parse_mps("NAME x\nFOO\nENDATA\n")

    @given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12))
    def test_number_format(self, value):
        text = format_number(value)
        assert len(text) <= 12
        assert format_number(float(text)) == text
        # twelve columns hold at least six significant digits, five when a
        # sign and a three-digit exponent share the field
        tight = "e" not in text or abs(int(text.split("e")[1])) < 100
        assert float(text) == pytest.approx(value, rel=1e-5 if tight else 1e-4, abs=1e-300)

    def test_lp_text(self, tmp_path):
        export_lp(knapsack(), tmp_path / "k.lp")
        text = (tmp_path / "k.lp").read_text()
        assert text.lower().startswith("\\") or "maximize" in text.lower()
        assert "binar" in text.lower()

    def test_validation_of_references(self):
        m = MilpModel()
        m.add_var("x")
        with pytest.raises(ModelError):
            m.add_row({3: 1.0}, "<=", 1.0)


@pytest.mark.skipif(find_cbc() is None, reason="no CBC executable")
class TestCbc:
    def test_tiny_lp(self):
        res = solve_with_cbc(tiny_lp(), time_limit=30)
        assert res.status == "optimal" and res.objective == pytest.approx(3.0)

    def test_knapsack(self):
        res = solve_with_cbc(knapsack(), time_limit=30)
        assert res.objective == pytest.approx(8.0)
