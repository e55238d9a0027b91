from __future__ import annotations

VERDICTS: dict[int, str] = {}


def record_verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
