"""Fixed-format MPS and CPLEX-style LP export, MPS import, provenance map.

Fixed MPS allows names of at most eight characters, so rows and columns are
written under generated names (``R0000001``, ``C0000001``; ``OBJ`` for the
objective).  :func:`write_provenance` maps every generated name back to the
model's own name and, for rows, to the constraint family tag.  Because the
generated names depend only on positions, re-exporting an imported model
reproduces the file byte for byte.

Field columns (1-based): type 2-3, name 5-12, name 15-22, value 25-36,
name 40-47, value 50-61.  The objective is always written for minimization;
a ``* SENSE MAX`` comment records that a maximization was negated, which
:func:`import_mps` undoes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .errors import MpsParseError
from .model import BINARY, CONTINUOUS, INTEGER, MilpModel

OBJ_ROW = "OBJ"
_SENSE_CODE = {"<=": "L", ">=": "G", "=": "E"}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}


def row_name(i: int) -> str:
    return f"R{i + 1:07d}"


def col_name(j: int) -> str:
    return f"C{j + 1:07d}"


def format_number(value: float) -> str:
    """Shortest text of at most 12 characters that reads back as close to ``value`` as possible."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError("MPS numbers must be finite")
    if value == 0.0:
        return "0"
    text = repr(value)
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) <= 12:
        return text
    for digits in range(12, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= 12:
            return text
    raise ValueError(f"cannot fit {value!r} into an MPS field")  # pragma: no cover


def _line(code: str = "", name1: str = "", name2: str = "", value1: str = "",
          name3: str = "", value2: str = "") -> str:
    """Place fields at their fixed columns and strip trailing blanks."""
    text = f" {code:<2} {name1:<8}  {name2:<8}  {value1:>12}"
    if name3:
        text += f"   {name3:<8}  {value2:>12}"
    return text.rstrip()


def mps_text(model: MilpModel) -> str:
    model.validate()
    sign = -1.0 if model.sense == "max" else 1.0
    lines = [f"NAME          {model.name[:8]}"]
    if model.sense == "max":
        lines.append("* SENSE MAX")
    lines.append("ROWS")
    lines.append(_line("N", OBJ_ROW))
    for i, row in enumerate(model.rows):
        lines.append(_line(_SENSE_CODE[row.sense], row_name(i)))
    lines.append("COLUMNS")
    by_col: list[list[tuple[str, float]]] = [[] for _ in model.variables]
    for j, c in sorted(model.objective.items()):
        by_col[j].append((OBJ_ROW, sign * c))
    for i, row in enumerate(model.rows):
        for j, a in sorted(row.coeffs.items()):
            by_col[j].append((row_name(i), a))
    in_int = False
    marker = 0
    for j, var in enumerate(model.variables):
        if var.is_integer and not in_int:
            lines.append(_line("", f"M{marker:07d}", "'MARKER'", "", "'INTORG'"))
            in_int = True
            marker += 1
        elif not var.is_integer and in_int:
            lines.append(_line("", f"M{marker:07d}", "'MARKER'", "", "'INTEND'"))
            in_int = False
            marker += 1
        entries = by_col[j] or [(OBJ_ROW, 0.0)]
        for r, a in entries:
            lines.append(_line("", col_name(j), r, format_number(a)))
    if in_int:
        lines.append(_line("", f"M{marker:07d}", "'MARKER'", "", "'INTEND'"))
    lines.append("RHS")
    if model.objective_constant:
        lines.append(_line("", "RHS", OBJ_ROW, format_number(-sign * model.objective_constant)))
    for i, row in enumerate(model.rows):
        if row.rhs != 0.0:
            lines.append(_line("", "RHS", row_name(i), format_number(row.rhs)))
    lines.append("BOUNDS")
    for j, var in enumerate(model.variables):
        name = col_name(j)
        lb, ub = var.lb, var.ub
        if lb == ub:
            lines.append(_line("FX", "BND", name, format_number(lb)))
            continue
        if var.is_integer or lb != 0.0:
            if lb == -math.inf:
                lines.append(_line("MI", "BND", name))
            else:
                lines.append(_line("LO", "BND", name, format_number(lb)))
        if ub != math.inf:
            lines.append(_line("UP", "BND", name, format_number(ub)))
        elif var.is_integer:
            lines.append(_line("PL", "BND", name))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def export_mps(model: MilpModel, path: str | Path) -> None:
    Path(path).write_text(mps_text(model), encoding="ascii")


def write_provenance(model: MilpModel, path: str | Path) -> None:
    """CSV ``kind, mps_name, name, tag`` for every row and column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "mps_name", "name", "tag"])
        for i, row in enumerate(model.rows):
            w.writerow(["row", row_name(i), row.name, row.tag])
        for j, var in enumerate(model.variables):
            w.writerow(["column", col_name(j), var.name, var.kind])


def _fields(line: str, line_no: int) -> list[str]:
    """Split a fixed-format data line into its six fields."""
    padded = line.ljust(61)
    if len(line) > 61:
        raise MpsParseError("line longer than 61 columns", line_no)
    for gap in (0, 3, 12, 13, 22, 23, 36, 37, 38, 47, 48):
        if padded[gap] != " ":
            raise MpsParseError(f"unexpected character in column {gap + 1}", line_no)
    return [padded[1:3].strip(), padded[4:12].strip(), padded[14:22].strip(),
            padded[24:36].strip(), padded[39:47].strip(), padded[49:61].strip()]


def _number(text: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MpsParseError(f"bad number {text!r}", line_no) from None
    if not math.isfinite(value):
        raise MpsParseError(f"non-finite number {text!r}", line_no)
    return value


def parse_mps(text: str) -> MilpModel:
    model = MilpModel()
    sense = "min"
    section = None
    obj_name = None
    rows: dict[str, int] = {}
    cols: dict[str, int] = {}
    integer = False
    bounded: set[int] = set()
    seen_end = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if raw.startswith("*"):
            if raw.strip().upper() == "* SENSE MAX":
                sense = "max"
            continue
        if not raw.strip():
            continue
        if not raw.startswith(" "):
            head = raw.split()
            section = head[0].upper()
            if section == "NAME":
                model.name = head[1] if len(head) > 1 else "model"
            elif section == "ENDATA":
                seen_end = True
                break
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES"):
                raise MpsParseError(f"unknown section {section!r}", line_no)
            if section == "RANGES":
                raise MpsParseError("RANGES section is not supported", line_no)
            continue
        f = _fields(raw, line_no)
        if section == "ROWS":
            code, name = f[0], f[1]
            if not name:
                raise MpsParseError("row without a name", line_no)
            if code == "N":
                if obj_name is None:
                    obj_name = name
                continue
            if code not in _CODE_SENSE:
                raise MpsParseError(f"unknown row type {code!r}", line_no)
            if name in rows:
                raise MpsParseError(f"duplicate row {name!r}", line_no)
            rows[name] = model.add_row({}, _CODE_SENSE[code], 0.0, name)
        elif section == "COLUMNS":
            if f[2] == "'MARKER'":
                if f[4] == "'INTORG'":
                    integer = True
                elif f[4] == "'INTEND'":
                    integer = False
                else:
                    raise MpsParseError(f"unknown marker {f[4]!r}", line_no)
                continue
            name = f[1]
            if not name:
                raise MpsParseError("column entry without a column name", line_no)
            if name not in cols:
                cols[name] = model.add_var(name, INTEGER if integer else CONTINUOUS)
            j = cols[name]
            for rname, val in ((f[2], f[3]), (f[4], f[5])):
                if not rname:
                    continue
                value = _number(val, line_no)
                if rname == obj_name:
                    if value:
                        model.objective[j] = value
                elif rname in rows:
                    if value:
                        model.rows[rows[rname]].coeffs[j] = value
                else:
                    raise MpsParseError(f"unknown row {rname!r}", line_no)
        elif section == "RHS":
            for rname, val in ((f[2], f[3]), (f[4], f[5])):
                if not rname:
                    continue
                value = _number(val, line_no)
                if rname == obj_name:
                    model.objective_constant = -value
                elif rname in rows:
                    model.rows[rows[rname]].rhs = value
                else:
                    raise MpsParseError(f"RHS for unknown row {rname!r}", line_no)
        elif section == "BOUNDS":
            code, cname = f[0], f[2]
            if cname not in cols:
                raise MpsParseError(f"bound for unknown column {cname!r}", line_no)
            var = model.variables[cols[cname]]
            needs_value = code in ("UP", "LO", "FX")
            value = _number(f[3], line_no) if needs_value else 0.0
            if code == "UP":
                var.ub = value
                if value < 0 and cols[cname] not in bounded and var.lb == 0.0:
                    var.lb = -math.inf
            elif code == "LO":
                var.lb = value
            elif code == "FX":
                var.lb = var.ub = value
            elif code == "MI":
                var.lb = -math.inf
            elif code == "PL":
                var.ub = math.inf
            elif code == "FR":
                var.lb, var.ub = -math.inf, math.inf
            elif code == "BV":
                var.kind, var.lb, var.ub = BINARY, 0.0, 1.0
            else:
                raise MpsParseError(f"unknown bound type {code!r}", line_no)
            bounded.add(cols[cname])
        else:
            raise MpsParseError("data line outside a section", line_no)
    if not seen_end:
        raise MpsParseError("missing ENDATA", len(text.splitlines()))
    for j, var in enumerate(model.variables):
        if var.kind == INTEGER:
            if j not in bounded:
                var.ub = 1.0  # conventional default for unbounded integer markers
            if var.lb >= 0.0 and var.ub <= 1.0:
                var.kind = BINARY
    if sense == "max":
        model.objective = {j: -c for j, c in model.objective.items()}
        model.objective_constant = -model.objective_constant
    model.sense = sense
    return model


def import_mps(path: str | Path) -> MilpModel:
    return parse_mps(Path(path).read_text(encoding="ascii"))


def lp_text(model: MilpModel) -> str:
    """CPLEX LP format under the same generated names as the MPS export."""
    model.validate()

    def expr(coeffs: dict[int, float]) -> str:
        parts = []
        for j, c in sorted(coeffs.items()):
            parts.append(f"{'-' if c < 0 else '+'} {format_number(abs(c))} {col_name(j)}")
        text = " ".join(parts) if parts else f"0 {col_name(0)}"
        return text[2:] if text.startswith("+ ") else text

    lines = ["\\ generated names; see the provenance map for model names",
             "Maximize" if model.sense == "max" else "Minimize"]
    obj = expr(model.objective)
    if model.objective_constant:
        c = model.objective_constant
        obj += f" {'-' if c < 0 else '+'} {format_number(abs(c))}"
    lines.append(f" {OBJ_ROW}: {obj}")
    lines.append("Subject To")
    for i, row in enumerate(model.rows):
        lines.append(f" {row_name(i)}: {expr(row.coeffs)} {row.sense} {format_number(row.rhs)}")
    lines.append("Bounds")
    for j, var in enumerate(model.variables):
        name = col_name(j)
        if var.lb == var.ub:
            lines.append(f" {name} = {format_number(var.lb)}")
        elif var.lb == -math.inf and var.ub == math.inf:
            lines.append(f" {name} free")
        else:
            lo = "-inf" if var.lb == -math.inf else format_number(var.lb)
            hi = "+inf" if var.ub == math.inf else format_number(var.ub)
            lines.append(f" {lo} <= {name} <= {hi}")
    ints = [col_name(j) for j, v in enumerate(model.variables) if v.kind == INTEGER]
    bins = [col_name(j) for j, v in enumerate(model.variables) if v.kind == BINARY]
    if ints:
        lines.append("Generals")
        lines.extend(f" {n}" for n in ints)
    if bins:
        lines.append("Binaries")
        lines.extend(f" {n}" for n in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: MilpModel, path: str | Path) -> None:
    Path(path).write_text(lp_text(model), encoding="ascii")
