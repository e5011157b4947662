import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nspicard.spectral import Grid, forward_array, inverse_real

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid16():
    return Grid(16, 2 * np.pi)


@pytest.fixture
def grid32():
    return Grid(32, 10.0)


def smooth_random_field(grid, rng, components=3, kmax=3):
    """Real field whose spectrum is confined to ``|k_s| <= kmax``."""
    data = rng.standard_normal((components,) + grid.shape)
    spec = forward_array(grid, data)
    k = np.fft.fftfreq(grid.n_per_axis, 1.0 / grid.n_per_axis)
    keep = np.abs(k) <= kmax
    mask = keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
    return inverse_real(grid, spec * mask)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
