"""Shared record of acceptance outcomes, printed at the end of the pytest run."""

from __future__ import annotations

RESULTS: dict[int, tuple[str, bool, str]] = {}


def record(number: int, tag: str, ok: bool, detail: str) -> str:
    RESULTS[number] = (tag, ok, detail)
    line = format_line(number)
    print(line, flush=True)
    return line


def format_line(number: int) -> str:
    tag, ok, detail = RESULTS[number]
    return f"{'PASS' if ok else 'FAIL'}  [{number}] {tag}: {detail}"
