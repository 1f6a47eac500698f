"""Acceptance suite: one recorded PASS/FAIL line per primary criterion.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the
terminal summary) or ``python3 tests/test_acceptance.py``.  The network
criteria solve full 15-minute scenarios and take about twenty minutes on
one core.
"""

from __future__ import annotations

import itertools
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linprog

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS, format_line, record  # noqa: E402
from oracles import (  # noqa: E402
    inner_max,
    inner_max_convex,
    rows_satisfiable_affine,
    rows_worst_affine,
    rows_worst_concave,
    rows_worst_convex,
)

from lwre.emissions import speed_rate  # noqa: E402
from lwre.lwr_core import (  # noqa: E402
    URBAN_FD,
    JunctionSpec,
    Link,
    Network,
    SignalPlan,
    junction_flows,
    ltm_simulate,
)
from lwre.macro_relation import calibrate_uncertainty, fit_affine, simulate_samples  # noqa: E402
from lwre.plan_search import PlanSearchConfig, SignalPlanSearch, complete_plan  # noqa: E402
from lwre.robust_milp import build_signal_milp  # noqa: E402
from lwre.scenario import SolveConfig, preset, run_base, run_lwre  # noqa: E402
from lwre.solver.bnb import BnbConfig, solve_milp  # noqa: E402
from lwre.solver.external import find_cbc, solve_with_cbc  # noqa: E402
from lwre.uncertainty import PiecewiseUncertaintySet, UncertaintySet  # noqa: E402

pytestmark = pytest.mark.slow

SAMPLES = 40_000
MC_RUNS = 115  # 350 samples per run after burn-in; the first 40,000 are kept
REFERENCE_BASE_OBJECTIVE = {"I": 5.331, "II": 6.615, "III": 7.142}
SCENARIO_CONFIG = SolveConfig(search=PlanSearchConfig(max_evals=20_000), bnb_time_limit=60.0,
                              empty_set="vacuous")
MC_LINK = Link.on_grid("mc", 400.0, URBAN_FD, 1.0)


def quiet(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kw)


def junction_model(n: int, seed: int):
    links = {str(i): Link.on_grid(str(i), 400.0, URBAN_FD, 10.0) for i in range(1, 5)}
    net = Network(links, [JunctionSpec("J", ("1", "2"), ("3", "4"),
                                       np.array([[0.5, 0.5], [0.3, 0.7]]), True)], 10.0)
    rng = np.random.default_rng(seed)
    demands = {"1": rng.uniform(0, URBAN_FD.capacity, n), "2": rng.uniform(0, URBAN_FD.capacity, n)}
    return build_signal_milp(net, n, boundary_demands=demands)


# -- 1-3: macroscopic relations ---------------------------------------------------


def test_speed_relation_fit():
    t0 = time.perf_counter()
    samples = simulate_samples(MC_RUNS, MC_LINK, "speed", 0)[:SAMPLES]
    rel = fit_affine(samples)
    elapsed = time.perf_counter() - t0
    ok = (len(samples) == SAMPLES and abs(rel.a1 / 26.13 - 1) <= 0.08
          and abs(rel.a0 - 89.94) <= 40 and rel.r2 >= 0.99 and elapsed <= 600)
    detail = (f"n={len(samples)} slope={rel.a1:.3f} (26.13 +-8%) intercept={rel.a0:.2f} "
              f"(89.94 +-40) R2={rel.r2:.4f} (>=0.99) {elapsed:.1f}s")
    record(1, "speed-relation-fit", ok, detail)
    assert ok, detail


def test_speed_rate_range():
    rates = speed_rate(np.linspace(0.0, 13.33, 10_001))
    lo, hi = float(rates.min()), float(rates.max())
    ok = abs(lo - 26.30) <= 0.05 and abs(hi - 30.02) <= 0.05
    detail = f"min={lo:.4f} max={hi:.4f} g/h (target [26.30, 30.02] +-0.05)"
    record(2, "speed-rate-range", ok, detail)
    assert ok, detail


def test_modal_relation_fit():
    samples = simulate_samples(MC_RUNS, MC_LINK, "modal", 0)[:SAMPLES]
    rel = fit_affine(samples)
    _, coverage = quiet(calibrate_uncertainty, samples, 0.0, 400.0, 53.3, 66.0, 1.0)
    ok = abs(rel.a1 / 52.31 - 1) <= 0.20 and rel.r2 >= 0.93 and 0.90 <= coverage <= 0.99
    detail = (f"slope={rel.a1:.3f} (52.31 +-20%) R2={rel.r2:.4f} (>=0.93) "
              f"coverage={coverage:.4f} ([0.90, 0.99]) intercept={rel.a0:.1f}")
    record(3, "modal-relation-fit", ok, detail)
    assert ok, detail


# -- 4-5: robust counterparts against primal LP oracles ----------------------------------


def random_affine_set(rng) -> UncertaintySet:
    lo = rng.uniform(0, 60, 2)
    hi = lo + rng.uniform(0, 40, 2)
    ratio = hi.sum() / lo.sum() if lo.sum() > 0 else 3.0
    return quiet(UncertaintySet, tuple(lo), tuple(hi), float(rng.uniform(1.0, ratio)))


def test_robust_dual_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_err, mismatches, empties = 0.0, 0, 0
    for _ in range(200):
        uset = random_affine_set(rng)
        n = int(rng.integers(1, 11))
        occ = rng.uniform(0, 100, n)
        h = float(rng.choice([1.0, 10.0])) / 3600.0
        oracle = inner_max(uset.lower, uset.upper, n * uset.budget_per_step, occ, h)
        rows = rows_worst_affine(uset, occ, h)
        if math.isinf(oracle) or math.isinf(rows):
            empties += 1
            mismatches += int(oracle != rows)
            mismatches += int(not rows_satisfiable_affine(uset, occ, h, -1e6))
            continue
        # the satisfiability threshold is the smallest cap the rows admit; the
        # direct probes sit outside the simplex's row feasibility tolerance
        worst_err = max(worst_err, abs(oracle - rows))
        margin = 1e-3 * max(1.0, abs(oracle))
        for cap, expect in ((oracle + margin, True), (oracle - margin, False)):
            mismatches += int(rows_satisfiable_affine(uset, occ, h, cap) != expect)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and worst_err <= 1e-6 and elapsed <= 60
    detail = (f"200 instances ({empties} with empty sets), max |row threshold - primal max| = "
              f"{worst_err:.2e}, probe mismatches = {mismatches}, {elapsed:.1f}s")
    record(4, "robust-dual-oracle", ok, detail)
    assert ok, detail


def test_pwa_reformulations():
    rng = np.random.default_rng(77)
    worst_cvx = worst_ccv = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 4))
        n = int(rng.integers(1, 7))
        occ = rng.uniform(0, 50, n)
        h = 1.0
        pieces = []
        for _ in range(m):
            lo = rng.uniform(0, 30, 2)
            hi = lo + rng.uniform(0.1, 20, 2)
            pieces.append((lo, hi))
        # convex: one shared budget with sigma in its nonempty range
        sets = [quiet(UncertaintySet, tuple(lo), tuple(hi), 1.0) for lo, hi in pieces]
        ratio = sum(s.upper[1] for s in sets) / max(sum(s.lower[1] for s in sets), 1e-9)
        sigma = float(rng.uniform(1.0, min(ratio, 3.0)))
        pset = PiecewiseUncertaintySet(tuple(sets), "convex", sigma)
        oracle = inner_max_convex([(s.lower, s.upper) for s in sets],
                                  n * pset.shared_budget_per_step, occ, h)
        worst_cvx = max(worst_cvx, abs(rows_worst_convex(pset, occ, h) - oracle))
        # concave: independent pieces, each with its own sigma
        own = []
        for lo, hi in pieces:
            cap_sigma = min(hi.sum() / max(lo.sum(), 1e-9), hi[1] / max(lo[1], 1e-9), 3.0)
            own.append(quiet(UncertaintySet, tuple(lo), tuple(hi), float(rng.uniform(1.0, cap_sigma))))
        cset = PiecewiseUncertaintySet(tuple(own), "concave")
        oracle = min(inner_max(s.lower, s.upper, n * s.budget_per_step, occ, h) for s in own)
        worst_ccv = max(worst_ccv, abs(rows_worst_concave(cset, occ, h) - oracle))
    ok = worst_cvx <= 1e-6 and worst_ccv <= 1e-6
    detail = (f"100 instances with 2-3 pieces: max-over-pieces error {worst_cvx:.2e}, "
              f"min-over-pieces error (selector enumeration) {worst_ccv:.2e}")
    record(5, "pwa-reformulations", ok, detail)
    assert ok, detail


# -- 6: MILP dynamics ------------------------------------------------------------------


def _linprog_value(model, lb, ub):
    c, a, lo, hi, _, _, _ = model.to_arrays()
    eq = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    import scipy.sparse as sp

    a_ub = sp.vstack([a[up], -a[dn]]).tocsr()
    b_ub = np.r_[hi[up], -lo[dn]]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a[eq], b_eq=hi[eq],
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status != 0:
        return None
    return -res.fun if model.sense == "max" else res.fun


def enumeration_check(seed: int, n: int = 8, n_free: int = 12):
    """B&B against enumeration of 2^12 assignments on a sub-instance of the two-approach junction model.

    A random plan is completed for all four green choices at steps 4 and 5.
    The binaries on which the four completions differ are left free,
    topped up with random others to ``n_free``; all remaining binaries are
    fixed at their shared values.  Eight steps let the first vehicles cross
    both links, so the four choices reach different throughputs.
    """
    sm = junction_model(n, seed)
    rng = np.random.default_rng(seed)
    base = np.eye(2, dtype=int)[:, rng.integers(0, 2, n)]
    xs = []
    for pattern in itertools.product((0, 1), repeat=2):
        u = base.copy()
        for j, p in enumerate(pattern):
            u[:, 3 + j] = (p, 1 - p)
        xs.append(complete_plan(sm, SignalPlan({"J": u})))
    ints = sm.model.integer_indices
    free = [i for i in ints if len({round(float(x[i])) for x in xs}) > 1]
    others = [i for i in ints if i not in set(free)]
    free += [int(i) for i in rng.choice(others, n_free - len(free), replace=False)]
    fixed = {i: round(float(xs[0][i])) for i in ints if i not in set(free)}
    sol = solve_milp(sm.model, BnbConfig(engine="highs"), fixed=fixed)
    _, _, _, _, lb0, ub0, _ = sm.model.to_arrays()
    best, values = None, set()
    for combo in itertools.product((0.0, 1.0), repeat=len(free)):
        lb, ub = lb0.copy(), ub0.copy()
        for i, v in itertools.chain(fixed.items(), zip(free, combo)):
            lb[i] = ub[i] = v
        val = _linprog_value(sm.model, lb, ub)
        if val is not None:
            values.add(round(val, 6))
            if best is None or val > best:
                best = val
    return sol, best, len(free), len(values)


def test_milp_dynamics_fidelity():
    n = 30
    sm = junction_model(n, 0)
    t0 = time.perf_counter()
    search = SignalPlanSearch(sm, PlanSearchConfig(max_evals=5_000, kicks=2))
    plan, _ = search.run()
    sol = solve_milp(sm.model, BnbConfig(time_limit=600, priorities=sm.branching_priorities()),
                     incumbent=complete_plan(sm, plan))
    elapsed = time.perf_counter() - t0
    solved = sol.status == "optimal"
    deviation, holding = math.inf, -1
    if sol.x is not None:
        milp_plan = sm.signal_plan(sol.x)
        sim = ltm_simulate(sm.network, milp_plan, sm.demands, n, eps=sm.bigm.eps)
        q_in, q_out = sm.flows(sol.x)
        deviation = max(float(np.max(np.abs(q_in[l] - sim.q_in[l]))) for l in sm.network.links)
        deviation = max(deviation, max(float(np.max(np.abs(q_out[l] - sim.q_out[l])))
                                       for l in sm.network.links))
        holding = 0
        jn = sm.network.junction("J")
        u = milp_plan.controls["J"]
        for k in range(n):
            allowed, _ = junction_flows([sim.demand[l][k] for l in jn.incoming],
                                        [sim.supply[l][k] for l in jn.outgoing], jn.turning, u[:, k])
            for i, lid in enumerate(jn.incoming):
                if u[i, k] and abs(q_out[lid][k] - allowed[i]) > 1e-4:
                    holding += 1
    enum = [enumeration_check(seed) for seed in (1, 2, 3)]
    enum_ok = all(s.status == "optimal" and best is not None and abs(s.objective - best) <= 1e-6
                  and distinct > 1 for s, best, _, distinct in enum)
    ok = solved and deviation <= 1e-4 and holding == 0 and enum_ok
    detail = (f"N=30 status={sol.status} objective={sol.objective:.8f} gap={sol.gap:.1e} "
              f"in {elapsed:.0f}s; replay max flow gap {deviation:.1e} veh/s; "
              f"holding violations {holding}; enumeration "
              + ", ".join(f"B&B {s.objective:.6f} vs {b if b is None else round(b, 6)} "
                          f"({k} binaries, {d} distinct values)" for s, b, k, d in enum))
    record(6, "milp-dynamics-fidelity", ok, detail)
    assert ok, detail


# -- 7 and 9: network experiments ----------------------------------------------------------


@pytest.fixture(scope="module")
def network_runs():
    runs = {}
    for name in ("I", "II", "III"):
        sc = preset(name)
        runs[name] = (run_base(sc, SCENARIO_CONFIG), run_lwre(sc, SCENARIO_CONFIG))
    return runs


def test_network_regime(network_runs):
    parts, ok = [], True
    for name, (base, lwre) in network_runs.items():
        d_ok = abs(base.objective / REFERENCE_BASE_OBJECTIVE[name] - 1) <= 0.25
        if lwre.feasible:
            a_ok = lwre.objective <= base.objective + 1e-9
            ratios = {lid: lwre.emissions.get(lid, 0.0) / cap for lid, cap in lwre.caps.items()}
            b_ok = max(ratios.values()) <= 1.10
            c_ok = name == "III" or lwre.total_emission <= base.total_emission
            lw = (f"LWR-E {lwre.objective:.4f} max emission/cap {max(ratios.values()):.3f} "
                  f"total {lwre.total_emission:.1f} g vs base {base.total_emission:.1f} g")
        else:
            a_ok = b_ok = c_ok = False
            worst = ", ".join(f"{lid}:{v:.0f}/{lwre.caps[lid]:.0f}" for lid, v in lwre.worst_case.items()
                              if v > lwre.caps[lid])
            lw = (f"LWR-E {lwre.status}, no plan meeting the robust caps "
                  f"(bound {lwre.bound:.4f}; closest plan worst-case/cap g {worst})")
        ok &= a_ok and b_ok and c_ok and d_ok
        parts.append(f"{name}: base {base.objective:.4f} vs {REFERENCE_BASE_OBJECTIVE[name]} "
                     f"[d {'ok' if d_ok else 'no'}], {lw} "
                     f"[a {'ok' if a_ok else 'no'} b {'ok' if b_ok else 'no'} c {'ok' if c_ok else 'no'}]")
    detail = "; ".join(parts)
    record(7, "network-regime", ok, detail)
    assert ok, detail


def test_external_solver_cross_check():
    cbc = find_cbc()
    sc = preset("I", horizon=9)
    from lwre.scenario import build_model

    sm = build_model(sc, with_caps=False)
    sol = solve_milp(sm.model, BnbConfig(time_limit=300, priorities=sm.branching_priorities()))
    if cbc is None:
        ok, detail = False, "no external solver available"
    else:
        ext = solve_with_cbc(sm.model, time_limit=600)
        rel = abs(ext.objective - sol.objective) / max(abs(sol.objective), 1e-12)
        ok = sol.status == "optimal" and ext.status == "optimal" and rel <= 1e-5
        detail = (f"scenario-I, N={sm.horizon} ({sm.model.census()['var:binary']} binaries): "
                  f"built-in {sol.status} {sol.objective:.8f}, CBC {ext.status} "
                  f"{ext.objective:.8f}, relative difference {rel:.1e}")
    record(8, "external-solver-cross-check", ok, detail)
    assert ok, detail


def _chain(scenarios):
    """Solve in order, offering each solution as a start to the next (a looser problem)."""
    out, starts = [], []
    for sc in scenarios:
        rep = run_lwre(sc, SCENARIO_CONFIG, starts=starts)
        if rep.plan is not None:
            starts = [rep.plan]
        out.append(rep)
    return out


def test_monotonicity():
    sc = preset("I")
    sigmas = (1.0, 1.1, 1.2, 1.3)
    by_sigma = _chain([sc.with_sigma(s) for s in sigmas])
    # caps x1 at the calibrated sigma = 1.2 is the third run above; keep its plan as the start
    by_scale = [by_sigma[2]] + _chain([sc.with_caps(sc.caps, f) for f in (1.5, 2.0)])

    def value(rep):
        return rep.objective if rep.feasible else -math.inf

    def nondecreasing(vals):
        return all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    sv = [value(r) for r in by_sigma]
    cv = [value(r) for r in by_scale]
    ok = nondecreasing(sv) and nondecreasing(cv)
    fmt = lambda vals: ", ".join("none" if math.isinf(v) else f"{v:.6f}" for v in vals)  # noqa: E731
    detail = (f"sigma {sigmas}: {fmt(sv)} (bounds {fmt([r.bound for r in by_sigma])}); "
              f"caps x(1, 1.5, 2): {fmt(cv)} (bounds {fmt([r.bound for r in by_scale])}); "
              "'none' = no feasible plan, ordered below every value; "
              "sigma 1.3 empties the set, so its caps are vacuous")
    record(9, "monotonicity", ok, detail)
    assert ok, detail


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print()
    for number in sorted(RESULTS):
        print(format_line(number))
    sys.exit(code)
