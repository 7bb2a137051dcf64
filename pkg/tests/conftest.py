import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slotfilter import SynthConfig, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_store():
    """6 classes x 12 images, P=6, D=8; 4 train classes, 2 test."""
    return generate_synthetic(SynthConfig(n_classes=6, images_per_class=12, n_patches=6, dim=8,
                                          relevant_fraction=0.5, signal_noise=0.1,
                                          background_noise=0.2, seed=3, n_test=2))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(line)
