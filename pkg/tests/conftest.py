import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number, title, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
