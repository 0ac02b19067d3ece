import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lattice_schauder.lattice import EdgeCoefficients, TorusLattice

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_edges(lat: TorusLattice, rng, lo=0.5, hi=2.0) -> EdgeCoefficients:
    """Symmetric coefficients with values in [lo, hi]."""
    pos = rng.uniform(lo, hi, (lat.size, lat.n))
    return EdgeCoefficients.from_edges(lat, pos)


def smooth_field(lat: TorusLattice, rng, modes=3, amp=0.5):
    x = lat.points()
    out = np.zeros(lat.size)
    for _ in range(modes):
        k = rng.integers(1, 3, lat.n)
        ph = rng.uniform(0, 2 * np.pi, lat.n)
        out += rng.uniform(-1, 1) * np.prod(np.sin(2 * np.pi * k * x + ph), axis=1)
    return amp * out / modes


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
