import numpy as np
import pytest
from scipy import integrate

from app.utils.grid import build_grid
from app.utils.testfn import SupportError, TestFunction, profile_integral, zero_test_function


def test_bump_peak_and_support():
    psi = TestFunction(center=(0.2,), radius=0.3, height=0.1, time=0.5, time_radius=0.1)
    assert float(psi.value([np.array(0.2)], 0.1, 0.5)) == pytest.approx(1.0)
    assert float(psi.value([np.array(0.55)], 0.1, 0.5)) == 0.0
    assert float(psi.value([np.array(0.2)], 0.1, 0.65)) == 0.0


@pytest.mark.parametrize("profile", ["bump", "poly"])
def test_derivatives_match_differences(profile):
    psi = TestFunction(center=(0.0,), radius=0.4, height=0.0, time=0.5, time_radius=0.2, profile=profile)
    x, xn, t, h = np.array(0.13), 0.07, 0.55, 1e-6
    grad = psi.gradient([x], xn, t)
    dx = (psi.value([x + h], xn, t) - psi.value([x - h], xn, t)) / (2 * h)
    dn = (psi.value([x], xn + h, t) - psi.value([x], xn - h, t)) / (2 * h)
    dt = (psi.value([x], xn, t + h) - psi.value([x], xn, t - h)) / (2 * h)
    assert float(grad[0]) == pytest.approx(float(dx), rel=1e-6)
    assert float(grad[1]) == pytest.approx(float(dn), rel=1e-6)
    assert float(psi.time_derivative([x], xn, t)) == pytest.approx(float(dt), rel=1e-6)


def test_separable_time_factor_integrates_to_one():
    psi = TestFunction(center=(0.0,), radius=0.3, height=0.0, time=0.5, time_radius=0.04,
                       separable=True, normalize_time=True)
    ts = np.linspace(0.46, 0.54, 20001)
    vals = psi.value([np.zeros_like(ts)], 0.0, ts)
    assert integrate.trapezoid(vals, ts) / 0.04 == pytest.approx(1.0, rel=1e-6)
    assert profile_integral("poly") == pytest.approx(32.0 / 35.0)


def test_support_checks():
    g = build_grid(2, 16, 16, 0.0, 1.0)
    with pytest.raises(SupportError):
        TestFunction(center=(0.8,), radius=0.3, time=0.5).check_inside(g)
    with pytest.raises(SupportError):
        TestFunction(center=(0.0,), radius=0.3, time=0.05, time_radius=0.1).check_inside(g)
    with pytest.raises(SupportError):
        TestFunction(center=(0.0,), radius=0.3).check_inside(g)
    TestFunction(center=(0.0,), radius=0.3, time=0.5).check_inside(g)
    with pytest.raises(SupportError):
        TestFunction(center=(0.0,), radius=0.3, height=0.8).check_inside_box(2, 0.0, 1.0)


def test_invalid_parameters():
    with pytest.raises(SupportError):
        TestFunction(center=(0.0,), radius=0.0)
    with pytest.raises(SupportError):
        TestFunction(center=(0.0,), radius=0.2, profile="gauss")


def test_zero_test_function():
    g = build_grid(3, 8, 8, 0.0, 1.0)
    psi = zero_test_function(g)
    assert not np.any(psi.value(g.mesh(), 0.0, 0.5))
