import numpy as np
import pytest

from posekit.geometry import speed_camera
from posekit.simdata import default_model

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def camera():
    return speed_camera()


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    rows = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail=""):
        rows.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in rows:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
