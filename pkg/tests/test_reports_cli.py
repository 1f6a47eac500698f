from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from lwre.cli import main
from lwre.lwr_core import URBAN_FD, Link, lax_hopf_moskowitz
from lwre.macro_relation import BoundaryScenario, simulate_link
from lwre.mps import export_mps
from lwre.plan_search import PlanSearchConfig
from lwre.reports import (
    COMPARISON_HEADER,
    STOPS_HEADER,
    VIOLATION_HEADER,
    emit_reports,
    read_grid_csv,
    write_grid_csv,
)
from lwre.scenario import SolveConfig, run_base, run_lwre, scenario_from_dict

from test_solver import knapsack

FAST = SolveConfig(search=PlanSearchConfig(max_evals=300, kicks=0), bnb_time_limit=20.0)


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def scenario_pair():
    sc = scenario_from_dict({"preset": "II", "horizon": 6})
    base = run_base(sc, FAST, keep_grids=True)
    lwre = run_lwre(sc.with_caps({"1": 0.01, "3": 1e6}), FAST, keep_grids=True)
    return base, lwre


class TestReports:
    def test_empty_list_gives_headers(self, tmp_path):
        emit_reports([], tmp_path)
        assert read_rows(tmp_path / "comparison.csv") == [COMPARISON_HEADER]
        assert read_rows(tmp_path / "violations.csv") == [VIOLATION_HEADER]
        assert read_rows(tmp_path / "stops.csv") == [STOPS_HEADER]
        assert json.loads((tmp_path / "summary.json").read_text()) == []

    def test_violation_rows_only_for_capped_links(self, tmp_path, scenario_pair):
        emit_reports(list(scenario_pair), tmp_path)
        rows = read_rows(tmp_path / "violations.csv")[1:]
        assert [r[2] for r in rows] == ["1", "3"]
        # the infeasible capped run has no emissions: empty fields and JSON null
        assert all(r[4] == "" and r[5] == "" for r in rows)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary[1]["total_emission"] is None and summary[1]["objective"] is None

    def test_comparison_total(self, tmp_path, scenario_pair):
        emit_reports(list(scenario_pair), tmp_path)
        rows = read_rows(tmp_path / "comparison.csv")[1:]
        total = [r for r in rows if r[1] == "total"][0]
        per_link = sum(float(r[2]) for r in rows if r[1] != "total" and r[2])
        assert float(total[2]) == pytest.approx(per_link, abs=1e-5)

    def test_deterministic_bytes(self, tmp_path, scenario_pair):
        a, b = tmp_path / "a", tmp_path / "b"
        emit_reports(list(scenario_pair), a)
        emit_reports(list(scenario_pair), b)
        for name in ("comparison.csv", "violations.csv", "stops.csv", "contours.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert sorted(p.name for p in (a / "grids").iterdir()) == [
            f"scenario-II_base_link{i}.csv" for i in sorted(range(1, 7), key=str)
        ]

    def test_grid_roundtrip(self, tmp_path):
        link = Link.on_grid("g", 400.0, URBAN_FD, 1.0)
        curves = simulate_link(link, BoundaryScenario(np.full(60, 0.2), np.full(60, 1.0)), 1.0)
        grid = lax_hopf_moskowitz(link, curves, 1.0, 10.0, 1.0)
        write_grid_csv(grid, tmp_path / "g.csv")
        back = read_grid_csv(tmp_path / "g.csv")
        assert back.dt == grid.dt and back.dx == grid.dx
        assert np.allclose(back.values, grid.values, atol=1e-6)


class TestCli:
    def test_simulate_and_fit(self, tmp_path, capsys):
        samples = tmp_path / "s.csv"
        assert main(["simulate-emissions", "--model", "modal", "--runs", "2", "--steps", "120",
                     "--out", str(samples)]) == 0
        assert read_rows(samples)[0] == ["lo", "aer"]
        rel = tmp_path / "rel.json"
        assert main(["fit", "--in", str(samples), "--l0", "0", "--u0", "400", "--l1", "50",
                     "--u1", "70", "--out", str(rel)]) == 0
        data = json.loads(rel.read_text())
        assert data["shape"] == "affine" and 0 <= data["uncertainty"]["coverage"] <= 1

    def test_fit_partial_bounds(self, tmp_path):
        samples = tmp_path / "s.csv"
        samples.write_text("lo,aer\n1,10\n2,12\n3,14\n")
        assert main(["fit", "--in", str(samples), "--l0", "0"]) == 1

    def test_solve(self, tmp_path, capsys):
        export_mps(knapsack(), tmp_path / "k.mps")
        out = tmp_path / "sol.csv"
        assert main(["solve", "--in", str(tmp_path / "k.mps"), "--out", str(out)]) == 0
        assert "objective 8" in capsys.readouterr().out
        assert len(read_rows(out)) == 4

    def test_solve_bad_file(self, tmp_path):
        (tmp_path / "bad.mps").write_text("NAME x\nFOO\n")
        assert main(["solve", "--in", str(tmp_path / "bad.mps")]) == 1

    def test_run_scenario_and_stops(self, tmp_path, capsys):
        path = tmp_path / "sc.json"
        path.write_text(json.dumps({"preset": "I", "horizon": 6}))
        out = tmp_path / "out"
        code = main(["run-scenario", "--scenario", str(path), "--mode", "base",
                     "--search-evals", "200", "--time-limit", "20", "--out", str(out)])
        assert code == 0
        assert json.loads(capsys.readouterr().out.split("\nnote")[0])["status"] == "optimal"
        grid = out / "grids" / "scenario-I_base_link1.csv"
        assert main(["analyze-stops", "--grid", str(grid), "--levels", "50"]) == 0

    def test_infeasible_exit_code(self, tmp_path):
        caps = tmp_path / "caps.json"
        caps.write_text(json.dumps({"1": 0.01}))
        path = tmp_path / "sc.json"
        path.write_text(json.dumps({"preset": "I", "horizon": 6}))
        code = main(["run-scenario", "--scenario", str(path), "--mode", "lwre", "--caps", str(caps),
                     "--search-evals", "200", "--time-limit", "20"])
        assert code == 2
