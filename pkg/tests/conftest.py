import numpy as np
import pytest

from folibochner.models import load_model


@pytest.fixture(scope="session")
def heis():
    return load_model("heisenberg")


@pytest.fixture(scope="session")
def engel():
    return load_model("engel")


@pytest.fixture(scope="session")
def flat():
    return load_model("flat_product(2,1)")


@pytest.fixture(scope="session")
def warped_v():
    return load_model("warped_heisenberg_vertical(phi=x0)")


@pytest.fixture(scope="session")
def warped_h():
    return load_model("warped_heisenberg_horizontal(psi=x2)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def record_criterion(key, passed, detail: str, blocking: bool = True, note: bool = False):
    status = "NOTE" if note else "PASS" if passed else ("FAIL" if blocking else "FAIL (non-blocking)")
    line = f"criterion {key}: {status}  {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return passed


def _order(key):
    head, _, tail = str(key).partition("-")
    return (int(head), tail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=_order):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
