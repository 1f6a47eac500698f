"""Command-line entry point.

Subcommands::

    simulate-emissions  Monte-Carlo (occupancy, AER) samples for one link
    fit                 affine or piecewise-affine relation, optional band calibration
    solve               solve an MPS model with the built-in branch-and-bound
    run-scenario        base or emission-capped signal optimization on a preset or file
    analyze-stops       stops per vehicle on a Moskowitz grid CSV

Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 solver limit
without a feasible point.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import LwreError
from .lwr_core import URBAN_FD, Link
from .macro_relation import (
    MonteCarloConfig,
    calibrate_uncertainty,
    fit_affine,
    fit_piecewise,
    samples_to_arrays,
    simulate_samples,
)
from .plan_search import PlanSearchConfig
from .scenario import EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_OK, SolveConfig, load_scenario

log = logging.getLogger("lwre")


def _read_samples(path: Path):
    with path.open() as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"lo", "aer"} <= set(reader.fieldnames):
            raise LwreError(f"{path}: expected columns lo,aer")
        rows = [(float(r["lo"]), float(r["aer"])) for r in reader]
    lo = np.array([r[0] for r in rows])
    aer = np.array([r[1] for r in rows])
    return lo, aer


def cmd_simulate(args) -> int:
    link = Link.on_grid("link", args.length, URBAN_FD, 1.0)
    config = MonteCarloConfig(steps=args.steps, burn_in=args.burn_in, cells=args.cells)
    samples = simulate_samples(args.runs, link, args.model, args.seed, config)
    if args.max_samples:
        samples = samples[: args.max_samples]
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lo", "aer"])
        for s in samples:
            writer.writerow([f"{s.lo:.9g}", f"{s.aer:.9g}"])
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    lo, aer = _read_samples(Path(args.inp))
    result: dict = {"samples": int(len(lo))}
    if args.shape == "affine":
        rel = fit_affine((lo, aer))
        result.update({"shape": "affine", "a1": rel.a1, "a0": rel.a0, "r2": rel.r2})
    else:
        rel = fit_piecewise((lo, aer), args.pieces, args.shape)
        result.update({"shape": rel.shape, "pieces": [list(p) for p in rel.pieces]})
    bounds = (args.l0, args.u0, args.l1, args.u1)
    if all(v is not None for v in bounds):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            uset, coverage = calibrate_uncertainty((lo, aer), *bounds, sigma=args.sigma)
        for w in caught:
            log.warning("%s", w.message)
        result["uncertainty"] = {"l0": args.l0, "u0": args.u0, "l1": args.l1, "u1": args.u1,
                                 "sigma": args.sigma, "coverage": coverage}
    elif any(v is not None for v in bounds):
        raise LwreError("--l0, --u0, --l1 and --u1 must be given together")
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_solve(args) -> int:
    from .mps import import_mps
    from .solver.bnb import BnbConfig, solve_milp

    model = import_mps(args.inp)
    sol = solve_milp(model, BnbConfig(gap=args.gap, time_limit=args.time_limit))
    print(f"status {sol.status}")
    if sol.x is not None:
        print(f"objective {sol.objective:.10g}")
    if math.isfinite(sol.bound):
        print(f"bound {sol.bound:.10g}")
    if args.out and sol.x is not None:
        with Path(args.out).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "value"])
            for var, val in zip(model.variables, sol.x):
                writer.writerow([var.name, f"{val:.12g}"])
    if sol.status == "infeasible":
        return EXIT_INFEASIBLE
    if sol.x is None:
        return EXIT_LIMIT
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    from .reports import emit_reports
    from .scenario import run_base, run_lwre

    scenario = load_scenario(args.scenario or args.preset)
    if args.caps:
        caps = json.loads(Path(args.caps).read_text())
        scenario = scenario.with_caps({str(k): float(v) for k, v in caps.items()})
    if args.cap_scale != 1.0:
        scenario = scenario.with_caps(scenario.caps, args.cap_scale)
    if args.relation:
        rel = json.loads(Path(args.relation).read_text())
        unc = rel.get("uncertainty")
        if not unc:
            raise LwreError(f"{args.relation}: no uncertainty block (run fit with --l0 ...)")
        from .uncertainty import UncertaintySet

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scenario.uncertainty = UncertaintySet.affine(
                unc["l0"], unc["u0"], unc["l1"], unc["u1"], unc.get("sigma", 1.0)
            )
    if args.sigma is not None:
        scenario = scenario.with_sigma(args.sigma)
    config = SolveConfig(
        search=PlanSearchConfig(seed=args.seed, max_evals=args.search_evals,
                                time_limit=args.search_time),
        bnb_time_limit=args.time_limit,
    )
    runner = run_base if args.mode == "base" else run_lwre
    report = runner(scenario, config, keep_grids=bool(args.out))
    if args.out:
        emit_reports([report], args.out)
    summary = report.summary()
    print(json.dumps({k: summary[k] for k in ("scenario", "mode", "status", "objective",
                                               "bound", "total_emission", "message")},
                     indent=2))
    for note in report.notes:
        print(f"note: {note}")
    return report.exit_code


def cmd_analyze_stops(args) -> int:
    from .reports import read_grid_csv
    from .scenario import count_stops

    grid = read_grid_csv(args.grid)
    stops = count_stops(grid, args.levels, args.v_stop)
    print(f"stops per vehicle {stops:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lwre", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-emissions", help="Monte-Carlo occupancy/AER samples")
    p.add_argument("--model", choices=("speed", "modal"), default="speed")
    p.add_argument("--runs", type=int, default=115)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=float, default=400.0, help="link length in m")
    p.add_argument("--steps", type=int, default=MonteCarloConfig.steps)
    p.add_argument("--burn-in", type=float, default=MonteCarloConfig.burn_in)
    p.add_argument("--cells", type=int, default=MonteCarloConfig.cells)
    p.add_argument("--max-samples", type=int, default=0, help="keep only the first N samples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a macroscopic relation to samples")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--pieces", type=int, default=1)
    p.add_argument("--shape", choices=("affine", "convex", "concave"), default="affine")
    for name in ("l0", "u0", "l1", "u1"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("solve", help="solve an MPS model with branch-and-bound")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--gap", type=float, default=1e-6)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run-scenario", help="optimize signals on a scenario")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=("I", "II", "III"))
    src.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--mode", choices=("base", "lwre"), default="base")
    p.add_argument("--caps", help="JSON object {link: grams}")
    p.add_argument("--cap-scale", type=float, default=1.0)
    p.add_argument("--relation", help="relation JSON written by 'fit' with bounds")
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--search-evals", type=int, default=20000)
    p.add_argument("--search-time", type=float, default=600.0)
    p.add_argument("--time-limit", type=float, default=120.0, help="branch-and-bound seconds")
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("analyze-stops", help="stops per vehicle on a grid CSV")
    p.add_argument("--grid", required=True)
    p.add_argument("--levels", type=int, default=50)
    p.add_argument("--v-stop", type=float, default=0.1)
    p.set_defaults(func=cmd_analyze_stops)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LwreError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
