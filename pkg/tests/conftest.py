import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance verdict line."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
