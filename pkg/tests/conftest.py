import pytest

from chcfem import build

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def ops_p1():
    return build(16, 1, eigen=True)


@pytest.fixture(scope="session", params=[1, 2, 3])
def ops_any(request):
    return build(8, request.param, eigen=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
