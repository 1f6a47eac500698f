"""Cross-check against an external MILP solver through the MPS export.

The reference solver is the CBC binary that ships with PuLP; it reads the
exported file on its own, so agreement with the built-in solver is an
end-to-end check of the model, the export and the search.  The export is
always a minimization, so a maximum is recovered by negation.
"""

from __future__ import annotations

import math
import re
import shutil
import subprocess
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import LwreError
from ..model import MilpModel
from ..mps import col_name, export_mps


@dataclass
class ExternalResult:
    status: str
    objective: float
    x: np.ndarray | None
    log: str


def find_cbc() -> str | None:
    """Path of a CBC executable: ``cbc`` on PATH, else the one bundled with PuLP."""
    found = shutil.which("cbc")
    if found:
        return found
    try:
        import pulp
    except ImportError:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        path = pulp.apis.PULP_CBC_CMD().path
    return path if path and Path(path).exists() else None


def solve_with_cbc(model: MilpModel, time_limit: float = 600.0, gap: float = 1e-9) -> ExternalResult:
    cbc = find_cbc()
    if cbc is None:
        raise LwreError("no CBC executable found")
    with tempfile.TemporaryDirectory() as tmp:
        mps = Path(tmp) / "model.mps"
        sol = Path(tmp) / "model.sol"
        export_mps(model, mps)
        cmd = [cbc, str(mps), "preprocess", "off", "sec", str(time_limit), "ratio", str(gap), "allowableGap", "0",
               "solve", "solu", str(sol)]
        run = subprocess.run(cmd, capture_output=True, text=True, timeout=time_limit + 60)
        if not sol.exists():
            return ExternalResult("error", math.nan, None, run.stdout + run.stderr)
        text = sol.read_text()
    first = text.splitlines()[0] if text else ""
    if first.startswith("Optimal"):
        status = "optimal"
    elif "nfeasible" in first:
        return ExternalResult("infeasible", math.nan, None, run.stdout)
    elif "Stopped" in first:
        status = "limit"
    else:
        return ExternalResult("error", math.nan, None, run.stdout)
    match = re.search(r"objective value\s+(\S+)", first)
    value = float(match.group(1)) if match else math.nan
    x = np.zeros(model.n_vars)
    index = {col_name(j): j for j in range(model.n_vars)}
    for line in text.splitlines()[1:]:
        parts = line.replace("**", " ").split()
        if len(parts) >= 3 and parts[1] in index:
            x[index[parts[1]]] = float(parts[2])
    sign = -1.0 if model.sense == "max" else 1.0
    # the export writes the constant as an objective right-hand side, which CBC includes
    return ExternalResult(status, sign * value, x, run.stdout)
