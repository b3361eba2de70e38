import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def record():
    """Store the one-line verdict for an acceptance criterion."""
    def _record(number: int, passed: bool, text: str, seconds: float):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {text} ({seconds:.1f}s)"
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
