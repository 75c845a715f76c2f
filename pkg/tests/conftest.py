import numpy as np
import pytest


def overlap_quadrature(a, b, extent=9.0, n=721):
    """Independent 2D trapezoid overlap of two unit-width Gaussian amplitude PSFs."""
    ax = np.linspace(-extent, extent, n)
    h = ax[1] - ax[0]
    x, y = np.meshgrid(ax, ax, indexing="ij")

    def psf(c):
        return np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / 4.0) / np.sqrt(2 * np.pi)

    return float((psf(a) * psf(b)).sum() * h * h)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
