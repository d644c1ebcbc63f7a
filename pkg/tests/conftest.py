import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from varelast import disc_example, fem
from varelast.energy import sec5_model

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def default_mesh():
    """Default graded cylinder used throughout the experiments."""
    return fem.build_cylinder_mesh(8, 6, 2, 2.0)


@pytest.fixture(scope="session")
def coarse_mesh():
    return fem.build_cylinder_mesh(4, 6, 2, 2.0)


@pytest.fixture(scope="session")
def box_mesh():
    return fem.build_box_mesh(3, 3, 3)


@pytest.fixture(scope="session")
def model():
    return sec5_model()


@pytest.fixture(scope="session")
def sec5():
    return disc_example.sec5_load()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
