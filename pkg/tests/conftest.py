import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance line; the test still asserts on its own."""
    def _record(label: str, ok: bool, detail: str, info: bool = False) -> bool:
        status = "INFO" if info else ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append(f"{status} {label}: {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
