import numpy as np
import pytest

from app.utils.geometry import (
    GeometryError,
    curvature_perpendicularity,
    curvature_slice,
    divergence_identity_residual,
    mean_curvature,
    normal_and_area,
    velocity,
    w22_diagnostic,
)
from app.utils.grid import build_grid, sample_graph
from app.utils.mcfsolve import observed_order
from app.utils.testfn import TestFunction


def test_flat_normal_and_area():
    gf = sample_graph("0.25", build_grid(2, 16, 4, 0.0, 1.0))
    nu, area = normal_and_area(gf, 2)
    assert np.allclose(area, 1.0)
    assert np.allclose(nu[0], 0.0)
    assert np.allclose(nu[1], 1.0)
    assert np.max(np.abs(mean_curvature(gf, 2).H)) == 0.0


@pytest.mark.parametrize("n,expr", [
    (2, "t - log(cos(x1))"),
    (3, "0.3 * sin(2 * x1) * cos(x2) + 0.2 * x2 * x2"),
])
def test_divergence_identity_is_exact(n, expr):
    gf = sample_graph(expr, build_grid(n, 32, 4, 0.0, 1.0))
    psi = TestFunction(center=(0.1,) * (n - 1), radius=0.5)
    assert abs(divergence_identity_residual(gf, 2, psi)) <= 1e-12


def test_circle_cap_curvature_converges():
    R = 4.0
    hs, errors = [], []
    for N in (16, 32, 64):
        g = build_grid(2, N, 1, 0.0, 1.0)
        f = np.sqrt(R * R - g.x() ** 2)
        H = curvature_slice(f, g.hx)
        errors.append(float(np.max(np.abs(H[1:-1] + 1.0 / R))))
        hs.append(g.hx)
    assert errors[-1] < 1e-3
    assert 1.7 <= observed_order(hs, errors) <= 2.3


def test_curvature_is_normal():
    gf = sample_graph("t - log(cos(x1))", build_grid(2, 32, 4, 0.0, 1.0))
    assert curvature_perpendicularity(gf, 2) <= 1e-12


def test_velocity_of_translation():
    gf = sample_graph("0.5 * t", build_grid(3, 8, 4, 0.0, 1.0))
    mid = velocity(gf, 2)
    assert not mid.one_sided
    assert np.allclose(mid.vn, 0.5)
    assert velocity(gf, 0).one_sided
    assert np.allclose(velocity(gf, 4).vvec[-1], 0.5)


def test_index_and_margin_checks():
    gf = sample_graph("0", build_grid(2, 8, 2, 0.0, 1.0))
    with pytest.raises(GeometryError):
        normal_and_area(gf, 3)
    with pytest.raises(GeometryError):
        w22_diagnostic(gf, 1.5)


def test_w22_ratio_of_flat_graph():
    gf = sample_graph("1", build_grid(2, 16, 2, 0.0, 1.0))
    diag = w22_diagnostic(gf, 0.5)
    assert diag.max_ratio == 0.0
    assert np.allclose(diag.f_norm, np.sqrt(2.0))
