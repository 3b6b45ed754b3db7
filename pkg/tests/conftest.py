import numpy as np
import pytest

from dtadjust import _accel
from dtadjust.core import validate_dataset

BACKENDS = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    with _accel.backend_as(request.param):
        yield request.param


def make_toy(seed=0, n=400, beta=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    w = rng.integers(0, 2, n)
    w[:2] = (0, 1)
    y = x[:, 0] + beta * w + rng.normal(size=n)
    return validate_dataset(y, w, x)


@pytest.fixture
def toy():
    return make_toy()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for the acceptance summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        lines.append((number, None if ok is None else bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines, key=lambda t: t[0]):
        status = "PASS" if ok is True else ("SKIP" if ok is None else "FAIL")
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
