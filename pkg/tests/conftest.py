import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from orthant_stats.catalog import pentagon_space, random_flag_space

settings.register_profile(
    "default",
    max_examples=200,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

Q5 = pentagon_space()
RANDOM3 = random_flag_space(8, 3, np.random.default_rng(11))
SPACES = {"q5": Q5, "random3": RANDOM3}


@pytest.fixture
def q5():
    return Q5


@st.composite
def points(draw, space, strata=None, low=0.05, high=3.0):
    """A point with positive coordinates on a randomly chosen stratum."""
    choices = sorted(strata if strata is not None else space.strata, key=lambda s: (len(s), sorted(s)))
    stratum = draw(st.sampled_from(choices))
    v = np.zeros(space.ambient_dim)
    for axis in sorted(stratum):
        v[axis] = draw(st.floats(low, high, allow_nan=False, allow_infinity=False))
    return space.point(v)


def top_points(space, **kw):
    return points(space, strata=space.maximal, **kw)


space_names = st.sampled_from(sorted(SPACES))


# per-criterion outcomes of the acceptance suite, reported after the run
_CRITERIA: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    item_marker = getattr(report, "criterion", None)
    if item_marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA.setdefault(item_marker, []).append(report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status = "PASS" if all(_CRITERIA[n]) else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n}")
