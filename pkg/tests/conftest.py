import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csp_explain.data import GridShape, Sample

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_sample(sid="s0", grid=GridShape(6, 4, 3, 2), seed=0, constant=None, static=True):
    """Random (or constant-valued) sample on ``grid``."""
    rng = np.random.default_rng(seed)
    shape = grid.weather_shape

    def chan():
        if constant is not None:
            return np.full(shape, constant, dtype=np.float32)
        return rng.uniform(0.0, 1.0, shape).astype(np.float32)

    statics = {"dem": rng.uniform(size=(1, grid.h, grid.w)).astype(np.float32)} if static else {}
    return Sample(id=sid, t_avg=chan(), t_min=chan(), t_max=chan(), p=chan(), r=chan(), static_channels=statics)


@pytest.fixture
def small_grid():
    return GridShape(6, 4, 3, 2)


# acceptance criteria: one PASS/FAIL line each in the terminal summary
_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, [title, True])
    entry[1] = entry[1] and not rep.failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")
