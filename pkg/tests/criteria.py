"""Collects one PASS/FAIL line per acceptance criterion for the session summary."""

LINES: dict[int, str] = {}


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    LINES[number] = line
    print(line)
    assert ok, line
