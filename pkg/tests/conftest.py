import warnings

import pytest

from wsym.material import MaterialParams
from wsym.mesh import generate_structured_alfeld
from wsym.source_driver import setup


@pytest.fixture(scope="session")
def params():
    return MaterialParams()


@pytest.fixture(scope="session")
def setup2(params):
    """Prepared source setup on the cells=2 split mesh, k=1."""
    return setup(generate_structured_alfeld(2), params, 1)


@pytest.fixture(autouse=True)
def _quiet_tracking():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="eigenvalue")
        yield


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines after the run, one per criterion."""
    import sys

    lines = [line for mod in list(sys.modules.values()) for line in getattr(mod, "ACCEPTANCE_LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
