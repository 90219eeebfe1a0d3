import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sauterpair.lattice import Constants, build_basis, make_grid

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

C2 = Constants().c2
LC = Constants().lambda_C


@pytest.fixture(scope="session")
def basis32():
    return build_basis(make_grid(2.0, 32))


@pytest.fixture(scope="session")
def basis64():
    return build_basis(make_grid(2.0, 64))


def smooth_random_potential(seed, grid, vmax=2 * C2, n_modes=3, t_scale=20 / C2):
    """V(z, t) built from a few low Fourier modes in z and t, bounded by vmax."""
    rng = np.random.default_rng(seed)
    kz = rng.integers(1, 4, size=n_modes)
    w = rng.uniform(0.2, 2.0, size=n_modes) * 2 * np.pi / t_scale
    ph = rng.uniform(0, 2 * np.pi, size=(n_modes, 2))
    amp = rng.uniform(-1, 1, size=n_modes)
    amp *= vmax / np.sum(np.abs(amp))

    def V(z, t):
        z = np.asarray(z)
        out = np.zeros_like(z, dtype=float)
        for a, k, om, (p1, p2) in zip(amp, kz, w, ph):
            out = out + a * np.cos(2 * np.pi * k * z / grid.L + p1) * np.cos(om * t + p2)
        return out

    return V


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
