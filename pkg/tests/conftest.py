"""Collects the one-line verdict of every acceptance criterion and prints them at the end."""

CRITERIA: dict[int, str] = {}


def record(number: int, ok: bool, text: str) -> None:
    CRITERIA[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
