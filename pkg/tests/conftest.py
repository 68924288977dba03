import pytest

_LINES_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record the verdict line of one acceptance criterion: criterion(n, ok, detail)."""
    lines = request.config.stash[_LINES_KEY]

    def record(number: int, ok: bool, detail: str) -> bool:
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
