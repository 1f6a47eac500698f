from __future__ import annotations

import numpy as np
import pytest

from lwre.lwr_core import URBAN_FD, JunctionSpec, Link, Network, SignalPlan
from lwre.plan_search import (
    PlanSearchConfig,
    SignalPlanSearch,
    cap_excess,
    complete_plan,
    green_lists,
    plan_from_green,
    plan_throughput,
    simulate_plan,
)
from lwre.robust_milp import build_signal_milp, robust_affine_constraints
from lwre.uncertainty import UncertaintySet


def junction_instance(n: int, seed: int = 0):
    links = {str(i): Link.on_grid(str(i), 400.0, URBAN_FD, 10.0) for i in range(1, 5)}
    net = Network(links, [JunctionSpec("J", ("1", "2"), ("3", "4"),
                                       np.array([[0.5, 0.5], [0.3, 0.7]]), True)], 10.0)
    rng = np.random.default_rng(seed)
    return build_signal_milp(net, n, boundary_demands={"1": rng.uniform(0, 4 / 3, n),
                                                       "2": rng.uniform(0, 4 / 3, n)})


class TestPlanSearch:
    def test_green_roundtrip(self):
        sm = junction_instance(6)
        plan = SignalPlan.fixed_time(sm.network, 6, 2)
        assert np.array_equal(plan_from_green(sm, green_lists(sm, plan)).controls["J"],
                              plan.controls["J"])

    def test_completion_is_a_feasible_point(self):
        sm = junction_instance(8, seed=3)
        plan = SignalPlan.fixed_time(sm.network, 8, 3)
        x = complete_plan(sm, plan)
        assert x is not None and sm.model.max_violation(x) <= 1e-7
        sim = simulate_plan(sm, plan)
        assert sm.model.objective_value(x) == pytest.approx(plan_throughput(sm, sim), abs=1e-9)

    def test_deterministic(self):
        sm = junction_instance(8, seed=1)
        cfg = PlanSearchConfig(seed=4, max_evals=400)
        a = SignalPlanSearch(sm, cfg).run()
        b = SignalPlanSearch(sm, cfg).run()
        assert a[1] == b[1]
        assert np.array_equal(a[0].controls["J"], b[0].controls["J"])

    def test_search_beats_fixed_time(self):
        sm = junction_instance(10, seed=2)
        plan, score = SignalPlanSearch(sm, PlanSearchConfig(max_evals=800)).run()
        fixed = plan_throughput(sm, simulate_plan(sm, SignalPlan.fixed_time(sm.network, 10, 2)))
        assert score >= fixed - 1e-12

    def test_cap_excess(self):
        sm = junction_instance(6, seed=5)
        robust_affine_constraints(sm, "1", 1e-3, UncertaintySet.affine(0, 400, 53.3, 66, 1.2))
        sim = simulate_plan(sm, SignalPlan.fixed_time(sm.network, 6, 2))
        assert cap_excess(sm, sim) > 0
