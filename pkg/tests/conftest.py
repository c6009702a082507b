import pytest

_CRITERIA_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _CRITERIA_LINES


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA_LINES, key=lambda l: int(l.split("]", 1)[1].split(".", 1)[0])):
            terminalreporter.write_line(line)
