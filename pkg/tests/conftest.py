import numpy as np
import pytest

from srmcf.group import parse_group

MODEL_KEYS = ["heisenberg", "rototranslation", "free:2", "free:3", "abelian:1", "abelian:2", "abelian:3"]


@pytest.fixture(params=MODEL_KEYS)
def model(request):
    return parse_group(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sample_points(g, count, rng, scale=1.0):
    """Random points of ``g`` as an ``(n, count)`` array."""
    x = rng.uniform(-scale, scale, size=(g.n, count))
    for ax, period in g.periodic_axes.items():
        x[ax] = rng.uniform(0.0, period, size=count)
    return x


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, passed, detail):
        _ACCEPTANCE.append((number, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
