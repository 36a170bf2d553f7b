import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from model import CnlsCoefficients, ConfigurationError, DomainLayout, build_grid
from pml import (
    PmlParameters,
    PmlStabilityWarning,
    build_coefficient_fields,
    build_profiles,
    max_sigma,
    sigma_derivative_eval,
    sigma_eval,
    stability_report,
)


def test_parameters_validation():
    with pytest.raises(ConfigurationError):
        PmlParameters(rho=0.0)
    with pytest.raises(ConfigurationError):
        PmlParameters(rho=math.pi / 2)
    with pytest.raises(ConfigurationError):
        PmlParameters(hx=-1.0)


def test_sigma_shape():
    L, delta, h = 6.0, 1.2, 30.0
    inside = np.linspace(0, L, 101)
    assert np.all(sigma_eval(h, L, delta, inside) == 0)
    right = np.linspace(L, L + delta, 401)
    values = sigma_eval(h, L, delta, right)
    assert np.all(values >= 0)
    assert np.all(np.diff(values) >= 0)
    assert max_sigma(h, L, delta) == pytest.approx(h, rel=1e-4)
    assert max_sigma(h, L, delta) <= h
    # mirrored layer
    np.testing.assert_allclose(sigma_eval(h, L, delta, L - right), values, rtol=1e-12)


def test_sigma_is_clamped_outside_the_box():
    assert sigma_eval(5.0, 6.0, 1.0, 100.0) == sigma_eval(5.0, 6.0, 1.0, 7.0)
    assert sigma_eval(5.0, 6.0, 1.0, -100.0) == sigma_eval(5.0, 6.0, 1.0, -1.0)
    with pytest.raises(ConfigurationError):
        sigma_eval(1.0, 6.0, 0.0, 7.0)


def test_sigma_derivative_matches_difference_quotient():
    L, delta, h = 6.0, 1.2, 3.3
    x = np.concatenate([np.linspace(-1.1, -0.05, 40), np.linspace(L + 0.05, L + 1.1, 40)])
    eps = 1e-6
    fd = (sigma_eval(h, L, delta, x + eps) - sigma_eval(h, L, delta, x - eps)) / (2 * eps)
    np.testing.assert_allclose(sigma_derivative_eval(h, L, delta, x), fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("x0", [0.0, 6.0])
def test_sigma_is_flat_at_the_interfaces(x0):
    L, delta, h = 6.0, 1.2, 30.0
    step = delta / 70
    left, mid, right = sigma_eval(h, L, delta, np.array([x0 - step, x0, x0 + step]))
    bound = 1e-6 * h
    assert abs(mid) < bound
    assert abs(right - left) / (2 * step) < bound
    assert abs(right - 2 * mid + left) / step**2 < bound
    assert sigma_derivative_eval(h, L, delta, x0) == 0.0


def test_max_sigma_is_linear_in_magnitude():
    L, delta = 6.0, 1.2
    assert max_sigma(6.6, L, delta) == pytest.approx(2 * max_sigma(3.3, L, delta), rel=1e-12)
    assert max_sigma(0.0, L, delta) == 0.0


def test_profiles_are_zero_on_the_physical_domain(small_box, pml_params, mixed_coeffs):
    layout, grid = small_box
    profile = build_profiles(layout, grid, pml_params, mixed_coeffs)
    sx, sy = grid.physical_slices(layout)
    assert np.all(profile.sigma_x[sx] == 0) and np.all(profile.sigma_y[sy] == 0)
    assert profile.sigma_x[0] > 0 and profile.sigma_y[-1] > 0
    assert profile.report.stable
    np.testing.assert_array_equal(profile.evaluate_x(profile.x)[sx], 0.0)


def test_unstable_profile_warns(small_box, mixed_coeffs):
    layout, grid = small_box
    with pytest.warns(PmlStabilityWarning):
        profile = build_profiles(layout, grid, PmlParameters(hx=20.0, hy=20.0), mixed_coeffs)
    assert not profile.report.stable


def test_no_warning_without_mixed_derivatives(small_box, linear_coeffs):
    layout, grid = small_box
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_profiles(layout, grid, PmlParameters(hx=30.0, hy=30.0), linear_coeffs)
    report = stability_report(layout, PmlParameters(hx=30.0, hy=30.0), linear_coeffs)
    assert report.threshold == math.inf and report.stable


def test_profiles_without_layers():
    layout, grid = build_grid(DomainLayout(4.0, 4.0), 0.25)
    profile = build_profiles(layout, grid, PmlParameters(hx=3.0, hy=3.0))
    assert not profile.sigma_x.any() and not profile.sigma_y.any()
    assert profile.report is None


def test_coefficient_fields(small_box, pml_params, cme2_coeffs):
    layout, grid = small_box
    profile = build_profiles(layout, grid, pml_params, cme2_coeffs)
    fields = build_coefficient_fields(profile, cme2_coeffs)
    sx, _ = grid.physical_slices(layout)
    assert fields.phase == pytest.approx(np.exp(1j * math.pi / 4))
    np.testing.assert_array_equal(fields.cx[sx], 1.0)
    assert fields.gx.shape == (2, grid.nx)
    np.testing.assert_allclose(fields.gx[1], 0.15 / (2 * 0.75) * profile.sigma_x)
    np.testing.assert_allclose(fields.cx, 1 / (1 + fields.phase * profile.sigma_x))
    assert np.all(np.abs(fields.cx) <= 1.0 + 1e-15)


def test_unit_sigma_coefficient(small_box, mixed_coeffs):
    layout, grid = small_box
    profile = build_profiles(layout, grid, PmlParameters(hx=3.3, hy=3.3))
    profile = replace(profile, sigma_x=np.ones(grid.nx), dsigma_x=np.zeros(grid.nx))
    fields = build_coefficient_fields(profile, mixed_coeffs)
    np.testing.assert_allclose(np.abs(fields.cx), 1 / abs(1 + np.exp(1j * math.pi / 4)), rtol=1e-12)
    assert abs(fields.cx[0]) == pytest.approx(0.54120, abs=1e-5)
    np.testing.assert_allclose(fields.gx[0], 0.25)
