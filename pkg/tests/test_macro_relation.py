from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwre.errors import ConfigurationError, DomainError, UncertaintySetError
from lwre.lwr_core import URBAN_FD, Link
from lwre.macro_relation import (
    BoundaryScenario,
    EmissionSample,
    MonteCarloConfig,
    PiecewiseAffineRelation,
    band_coverage,
    calibrate_uncertainty,
    fit_affine,
    fit_piecewise,
    random_boundary_scenario,
    samples_to_arrays,
    simulate_link,
    simulate_samples,
)

LINK = Link.on_grid("m", 400.0, URBAN_FD, 1.0)
CAP = URBAN_FD.capacity


def samples_from(points):
    return [EmissionSample(float(a), float(b)) for a, b in points]


class TestBoundaryScenario:
    def test_deterministic(self):
        a = random_boundary_scenario(11, LINK, 300)
        b = random_boundary_scenario(11, LINK, 300)
        assert np.array_equal(a.demand, b.demand) and np.array_equal(a.supply, b.supply)
        assert np.array_equal(a.entry_gate, b.entry_gate)

    def test_all_red_downstream(self):
        sc = random_boundary_scenario(3, LINK, 200, all_red_downstream=True)
        assert np.all(sc.supply == 0)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_levels_within_capacity(self, seed):
        sc = random_boundary_scenario(seed, LINK, 250)
        for arr in (sc.demand, sc.supply):
            assert np.all(arr >= 0) and np.all(arr <= CAP)
        assert set(np.unique(sc.entry_gate)) <= {0.0, 1.0}

    def test_gate_phases_within_range(self):
        sc = random_boundary_scenario(5, LINK, 2000)
        changes = np.flatnonzero(np.diff(sc.entry_gate)) + 1
        lengths = np.diff(changes)
        assert lengths.min() >= 10 and lengths.max() <= 80  # merged equal phases allowed

    def test_bad_horizon(self):
        with pytest.raises(ConfigurationError):
            random_boundary_scenario(0, LINK, 0)


class TestSimulateLink:
    def test_red_entrance_holds_arrivals(self):
        n = 60
        gate = np.r_[np.zeros(20), np.ones(40)]
        sc = BoundaryScenario(np.full(n, 0.5), np.full(n, CAP), gate)
        curves = simulate_link(LINK, sc, 1.0)
        assert curves.n_up[20] == 0.0
        # the queue built during red discharges at capacity once green
        assert curves.n_up[21] == pytest.approx(CAP)
        assert curves.n_up[-1] == pytest.approx(0.5 * n)

    def test_curve_invariants(self):
        sc = random_boundary_scenario(9, LINK, 400)
        simulate_link(LINK, sc, 1.0).check(LINK)


class TestSimulateSamples:
    def test_empty_demand(self):
        samples = simulate_samples(2, LINK, "speed", 0, demand_level=0.0)
        assert samples and all(s.lo == 0 and s.aer == 0 for s in samples)

    def test_counts_and_determinism(self):
        cfg = MonteCarloConfig(steps=160, burn_in=60.0)
        a = simulate_samples(3, LINK, "modal", 4, cfg)
        b = simulate_samples(3, LINK, "modal", 4, cfg)
        assert len(a) == 3 * 100
        assert a == b

    def test_bounds(self):
        lo, aer = samples_to_arrays(simulate_samples(3, LINK, "speed", 1))
        assert np.all(lo >= 0) and np.all(lo <= LINK.storage + 1e-9) and np.all(aer >= 0)

    def test_bad_runs(self):
        with pytest.raises(ConfigurationError):
            simulate_samples(0, LINK)

    def test_unknown_model(self):
        with pytest.raises(ConfigurationError):
            simulate_samples(1, LINK, "nox")


class TestFitAffine:
    def test_exact_line(self):
        rel = fit_affine(samples_from([(1, 10), (2, 12), (3, 14)]))
        assert rel.a1 == pytest.approx(2.0) and rel.a0 == pytest.approx(8.0)
        assert rel.r2 == pytest.approx(1.0)

    def test_hand_ols(self):
        rel = fit_affine(samples_from([(0, 0), (1, 1), (2, 0), (3, 1)]))
        assert rel.a1 == pytest.approx(0.2) and rel.a0 == pytest.approx(0.2)

    def test_degenerate(self):
        with pytest.raises(DomainError):
            fit_affine(samples_from([(1, 1), (1, 2), (1, 3)]))

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_least_squares_optimality(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(0, 100, 50)
        aer = 30 * lo + rng.normal(0, 20, 50)
        rel = fit_affine((lo, aer))
        base = np.sum((aer - rel(lo)) ** 2)
        for d1 in (-1e-3, 1e-3):
            for d0 in (-1e-3, 1e-3):
                assert np.sum((aer - ((rel.a1 + d1) * lo + rel.a0 + d0)) ** 2) >= base


class TestCalibration:
    data = samples_from([(10, 600), (20, 1300), (30, 1900)])

    def test_full_coverage(self):
        _, cov = calibrate_uncertainty(self.data, 0, 400, 50, 70, 1.0)
        assert cov == 1.0

    def test_degenerate_band(self):
        with pytest.warns(UserWarning):
            _, cov = calibrate_uncertainty(samples_from([(10, 100)]), 5, 5, 2, 2, 1.0)
        assert cov == 0.0

    def test_empty_set(self):
        with pytest.raises(UncertaintySetError):
            calibrate_uncertainty(self.data, 0, 400, 53.3, 66, 1.3)

    def test_sigma_above_bound(self):
        with pytest.raises(UncertaintySetError):
            calibrate_uncertainty(self.data, 0, 400, 53.3, 66, 9.0)

    def test_low_coverage_warns(self):
        with pytest.warns(UserWarning, match="covers only"):
            calibrate_uncertainty(self.data, 0, 10, 60, 61, 1.0)

    @given(st.floats(0, 50), st.floats(0, 50))
    def test_monotone_in_bounds(self, widen_lo, widen_hi):
        rng = np.random.default_rng(0)
        lo = rng.uniform(0, 150, 200)
        aer = 55 * lo + rng.normal(100, 150, 200)
        narrow = band_coverage((lo, aer), 0, 300, 53, 60)
        wide = band_coverage((lo, aer), -widen_lo, 300 + widen_hi, 53, 60)
        assert wide >= narrow


class TestFitPiecewise:
    def test_single_piece_matches_affine(self):
        rng = np.random.default_rng(2)
        lo = rng.uniform(0, 10, 40)
        aer = 3 * lo + rng.normal(0, 1, 40)
        rel = fit_piecewise((lo, aer), 1, "convex")
        aff = fit_affine((lo, aer))
        assert np.allclose(rel.pieces[0], (aff.a1, aff.a0))

    def test_convex_abs(self):
        x = np.linspace(0, 2, 41)
        rel = fit_piecewise((x, np.abs(x - 1)), 2, "convex")
        assert np.allclose(sorted(rel.pieces), [(-1.0, 1.0), (1.0, -1.0)])

    def test_concave_tent(self):
        x = np.linspace(0, 2, 41)
        rel = fit_piecewise((x, np.minimum(x, 2 - x)), 2, "concave")
        assert np.allclose(sorted(rel.pieces), [(-1.0, 2.0), (1.0, 0.0)])

    def test_insufficient_samples(self):
        with pytest.raises(DomainError):
            fit_piecewise(samples_from([(0, 0), (1, 1), (10, 3)]), 3, "convex")

    def test_bad_piece_count(self):
        with pytest.raises(ConfigurationError):
            fit_piecewise(samples_from([(0, 0), (1, 1)]), 0)

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=4),
           st.floats(-10, 10), st.floats(-10, 10))
    def test_shape_properties(self, pieces, x1, x2):
        mid = 0.5 * (x1 + x2)
        convex = PiecewiseAffineRelation(tuple(pieces), "convex")
        concave = PiecewiseAffineRelation(tuple(pieces), "concave")
        assert convex(mid) <= 0.5 * (convex(x1) + convex(x2)) + 1e-9
        assert concave(mid) >= 0.5 * (concave(x1) + concave(x2)) - 1e-9


def test_determinism_end_to_end():
    cfg = MonteCarloConfig(steps=200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        runs = [simulate_samples(2, LINK, "modal", 8, cfg) for _ in range(2)]
        fits = [fit_affine(r) for r in runs]
        covs = [calibrate_uncertainty(r, 0, 400, 53.3, 66, 1.2)[1] for r in runs]
    assert fits[0] == fits[1] and covs[0] == covs[1]
