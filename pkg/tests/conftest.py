import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))  # shared oracles module

_ACCEPTANCE_LINES: list = []


def acceptance_line(name: str, passed: bool, detail: str = "") -> None:
    """Record one acceptance-criterion verdict for the terminal summary."""
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}" + (f" - {detail}" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
