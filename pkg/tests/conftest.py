import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` logs one acceptance line and returns ``ok``."""
    lines = request.config.stash[_KEY]

    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda nl: nl[0]):
            terminalreporter.write_line(line)
