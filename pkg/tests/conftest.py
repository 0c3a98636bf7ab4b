import pytest

_LINES = []


@pytest.fixture
def report():
    """Record a one-line PASS/FAIL verdict, echoed in the terminal summary."""
    def emit(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        _LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
