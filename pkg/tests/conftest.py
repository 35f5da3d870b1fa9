import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_record():
    def record(n, line):
        _LINES[n] = line
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
