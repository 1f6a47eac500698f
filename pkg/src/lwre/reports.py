"""Report files for scenario runs.

``emit_reports`` writes:

* ``comparison.csv``: emissions per link, base against LWR-E, per scenario;
* ``violations.csv``: cap, emission and violation percentage of every capped link;
* ``stops.csv``: average stops per traced vehicle;
* ``grids/<scenario>_<mode>_link<id>.csv``: Moskowitz surfaces kept by the run;
* ``contours.json``: vehicle trajectories as ``(t, x)`` polylines;
* ``summary.json``: the scalar results of every run.

Missing values (an infeasible run has no emissions) are written as empty
CSV fields and JSON ``null``.  Numbers are formatted with a fixed
precision so that equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

from .scenario import RunReport, _link_key, contour_polylines

COMPARISON_HEADER = ["scenario", "link", "base_g", "lwre_g", "cap_g"]
VIOLATION_HEADER = ["scenario", "mode", "link", "cap_g", "emission_g", "violation_pct",
                    "worst_case_g"]
STOPS_HEADER = ["scenario", "mode", "link", "stops_per_vehicle"]


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value) or math.isinf(value):
        return ""
    return f"{value:.6f}"


def _jsonable(value):
    if isinstance(value, float):
        return None if math.isnan(value) or math.isinf(value) else round(value, 9)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _write_csv(path: Path, header: list[str], rows: Iterable[list[str]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def comparison_rows(reports: list[RunReport]) -> list[list[str]]:
    by_scenario: dict[str, dict[str, RunReport]] = {}
    for rep in reports:
        by_scenario.setdefault(rep.scenario, {})[rep.mode] = rep
    rows = []
    for name in sorted(by_scenario):
        pair = by_scenario[name]
        base, lwre = pair.get("base"), pair.get("lwre")
        links = set()
        for rep in (base, lwre):
            if rep is not None:
                links.update(rep.emissions)
                links.update(rep.caps)
        for lid in sorted(links, key=_link_key):
            rows.append([
                name,
                lid,
                _fmt(base.emissions.get(lid) if base else None),
                _fmt(lwre.emissions.get(lid) if lwre else None),
                _fmt(lwre.caps.get(lid) if lwre else None),
            ])
        rows.append([
            name,
            "total",
            _fmt(base.total_emission if base and base.feasible else None),
            _fmt(lwre.total_emission if lwre and lwre.feasible else None),
            "",
        ])
    return rows


def violation_rows(reports: list[RunReport]) -> list[list[str]]:
    rows = []
    for rep in reports:
        for lid in sorted(rep.caps, key=_link_key):
            rows.append([
                rep.scenario,
                rep.mode,
                lid,
                _fmt(rep.caps[lid]),
                _fmt(rep.emissions.get(lid)),
                _fmt(rep.violations.get(lid)),
                _fmt(rep.worst_case.get(lid)),
            ])
    return rows


def emit_reports(reports: list[RunReport], out_dir: str | Path, n_trajectories: int = 50) -> list[Path]:
    """Write every report file into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "comparison.csv"
    _write_csv(path, COMPARISON_HEADER, comparison_rows(reports))
    written.append(path)

    path = out / "violations.csv"
    _write_csv(path, VIOLATION_HEADER, violation_rows(reports))
    written.append(path)

    path = out / "stops.csv"
    stop_rows = [[rep.scenario, rep.mode, lid, _fmt(rep.stops[lid])]
                 for rep in reports for lid in sorted(rep.stops, key=_link_key)]
    _write_csv(path, STOPS_HEADER, stop_rows)
    written.append(path)

    contours: dict[str, dict[str, dict[str, list]]] = {}
    for rep in reports:
        if not rep.grids:
            continue
        grid_dir = out / "grids"
        grid_dir.mkdir(exist_ok=True)
        for lid in sorted(rep.grids, key=_link_key):
            grid = rep.grids[lid]
            path = grid_dir / f"{rep.scenario}_{rep.mode}_link{lid}.csv"
            write_grid_csv(grid, path)
            written.append(path)
            contours.setdefault(rep.scenario, {}).setdefault(rep.mode, {})[lid] = (
                contour_polylines(grid, n_trajectories)
            )
    path = out / "contours.json"
    path.write_text(json.dumps(contours, sort_keys=True, indent=1) + "\n")
    written.append(path)

    path = out / "summary.json"
    summary = [_jsonable(rep.summary()) for rep in reports]
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    written.append(path)
    return written


def write_grid_csv(grid, path: str | Path) -> None:
    """One row per time level: ``t`` then ``N(t, x)`` at every grid position."""
    header = ["t"] + [f"x={x:g}" for x in grid.positions]
    rows = ([_fmt(t)] + [_fmt(v) for v in row] for t, row in zip(grid.times, grid.values))
    _write_csv(Path(path), header, rows)


def read_grid_csv(path: str | Path):
    """Inverse of :func:`write_grid_csv` for a uniform grid."""
    import numpy as np

    from .errors import ConfigurationError
    from .lwr_core import MoskowitzGrid

    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t" or len(header) < 3:
            raise ConfigurationError(f"{path}: not a grid file")
        rows = [[float(v) for v in row] for row in reader if row]
    if len(rows) < 2:
        raise ConfigurationError(f"{path}: need at least two time levels")
    data = np.array(rows)
    xs = np.array([float(h.split("=", 1)[1]) for h in header[1:]])
    dt = float(data[1, 0] - data[0, 0])
    dx = float(xs[1] - xs[0])
    return MoskowitzGrid(data[:, 1:], dt, dx)
