import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line: ``report(n, passed, detail)``."""
    lines = request.config.stash.setdefault(_LINES, [])

    def _report(number: int, passed: bool, detail: str) -> bool:
        lines.append((number, f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed
    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
