import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; a test that dies before recording counts as FAIL."""
    lines = request.config.stash[_RESULTS]
    label = request.node.get_closest_marker("criterion").args[0]
    done = []

    def record(ok: bool, detail: str) -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(lines[-1])
        done.append(ok)
        return ok

    yield record
    if not done:
        lines.append(f"FAIL  {label}: raised before a verdict")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_RESULTS]
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
