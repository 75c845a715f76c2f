import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spadesense.sensing_models import (
    BrightnessTrace,
    OdmrModel,
    brightness_from_intensities,
    field_from_zeeman,
    field_rmse,
    fit_field,
    odmr_dimensionless,
    odmr_intensity,
    rabi_dimensionless,
    rabi_intensity,
    zeeman_from_field,
)


def test_odmr_limits():
    m = OdmrModel(chi=0.5, linewidth=1.0, omega0=100.0)
    assert odmr_intensity(1e9, 3.0, m) == pytest.approx(1.0, abs=1e-12)
    assert odmr_intensity(100.0 + 1e4, 1e4, m) == pytest.approx(0.75, abs=1e-6)
    assert odmr_intensity(100.0, 0.0, m) == pytest.approx(0.5)


def test_dimensionless_matches_physical():
    m = OdmrModel(chi=0.4, linewidth=2.0, omega0=50.0)
    omega = np.linspace(40, 60, 11)
    assert np.allclose(odmr_intensity(omega, 3.0, m), odmr_dimensionless((omega - 50.0) / 2.0, 1.5, 0.4))
    t = np.linspace(0, 5, 9)
    assert np.allclose(rabi_intensity(t, 3.0, 2.0), rabi_dimensionless(2.0 * t / 2, 1.5))


def test_zeeman_roundtrip():
    m = OdmrModel(strain=0.0)
    assert zeeman_from_field(0.0, OdmrModel(strain=7.0)) == pytest.approx(7.0)
    b = np.array([1e-4, 2e-4])
    z = zeeman_from_field(b, m)
    assert z[1] == pytest.approx(2 * z[0])
    m2 = OdmrModel(strain=1e6)
    assert np.allclose(field_from_zeeman(zeeman_from_field(b, m2), m2), b, rtol=1e-12)


def test_rabi_examples():
    assert rabi_intensity(0.0, 2.0, 1.0) == pytest.approx(0.25)
    assert rabi_intensity(np.pi / 2.0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    t = np.linspace(0, 3, 7)
    assert np.allclose(rabi_intensity(t, 1.3, 1.3), np.cos(1.3 * t / 2) ** 2)
    with pytest.raises(ValueError):
        rabi_intensity(0.0, 0.5, 1.0)


def test_brightness_from_intensities():
    assert np.allclose(brightness_from_intensities([2, 2, 2]), 1 / 3)
    assert np.allclose(brightness_from_intensities([1, 3]), [0.25, 0.75])
    m = OdmrModel(chi=0.5, linewidth=1.0, omega0=0.0)
    vals = odmr_intensity(0.7, np.array([0.2, 1.0, 2.5]), m)
    assert np.allclose(brightness_from_intensities(vals), vals / vals.sum())
    with pytest.raises(ValueError):
        brightness_from_intensities([1.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.3, 5.0), min_size=1, max_size=4), st.floats(1e3, 1e6))
def test_odmr_noiseless_fit(phis, scale):
    g = np.linspace(-6, 6, 41)
    data = np.array([scale * odmr_dimensionless(g, p, 0.5) for p in phis]).T
    fit = fit_field((g, data), "odmr")
    assert np.allclose(fit.phi, phis, atol=1e-6)
    assert np.allclose(fit.scale, scale, rtol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1.0, 2.5), min_size=1, max_size=4))
def test_rabi_noiseless_fit(phis):
    g = np.linspace(0, 2 * np.pi, 41)
    budgets = np.full(g.size, 1e5)
    intens = np.array([rabi_dimensionless(g, p) for p in phis]).T + 1e-12
    i0 = intens.sum(axis=1)
    trace = BrightnessTrace(g, intens / i0[:, None], i0)
    fit = fit_field(trace, "rabi")
    assert np.allclose(fit.phi, phis, atol=1e-6)
    assert budgets.size == g.size


def test_fit_needs_enough_points():
    with pytest.raises(ValueError):
        fit_field((np.arange(4.0), np.ones((4, 1))), "odmr")


def test_rmse():
    assert field_rmse([1, 2], [1, 4]) == pytest.approx(np.sqrt(2))
