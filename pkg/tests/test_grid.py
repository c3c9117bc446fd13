import numpy as np
import pytest

from app.utils.grid import (
    AmbientField,
    GraphFlow,
    GridError,
    build_grid,
    gradient,
    hessian,
    parabolic_seminorm,
    parabolic_seminorm_estimate,
    sample_graph,
    time_derivative,
)


@pytest.mark.parametrize("args", [
    (4, 8, 4, 0.0, 1.0),
    (2, 3, 4, 0.0, 1.0),
    (2, 8, 0, 0.0, 1.0),
    (2, 8, 4, 1.0, 1.0),
])
def test_build_grid_rejects(args):
    with pytest.raises(GridError):
        build_grid(*args)


def test_grid_geometry():
    g = build_grid(3, 8, 4, 0.0, 2.0)
    assert g.hx == pytest.approx(0.25)
    assert g.dt == pytest.approx(0.5)
    assert g.shape == (5, 9, 9)
    assert np.sum(g.spatial_weights()) == pytest.approx(4.0)
    assert np.sum(g.time_weights()) == pytest.approx(2.0)
    assert g.boundary_mask().sum() == 32


def test_sample_graph_layout():
    g = build_grid(2, 8, 4, 0.0, 1.0)
    gf = sample_graph("x1 + t", g)
    assert gf.f.shape == (5, 9)
    assert gf.f[2, 3] == pytest.approx(g.x()[3] + g.t()[2])
    assert not gf.f.flags.writeable


def test_sample_graph_reports_non_finite():
    g = build_grid(2, 8, 4, 0.0, 1.0)
    with pytest.raises(GridError, match="not finite"):
        sample_graph("log(x1)", g)


def test_boundary_trace_must_match():
    g = build_grid(2, 8, 2, 0.0, 1.0)
    f = np.zeros(g.shape)
    with pytest.raises(GridError):
        GraphFlow(grid=g, f=f, boundary=np.ones((3, 2)))


def test_stencils_exact_on_quadratics():
    g = build_grid(3, 8, 4, 0.0, 1.0)
    x1, x2 = g.mesh()
    fj = x1 * x2 + x1 ** 2
    gx, gy = gradient(fj, g.hx)
    assert np.max(np.abs(gx - (x2 + 2 * x1))) < 1e-12
    assert np.max(np.abs(gy - x1)) < 1e-12
    H = hessian(fj, g.hx)
    assert np.max(np.abs(H[0, 0] - 2.0)) < 1e-10
    assert np.max(np.abs(H[0, 1] - 1.0)) < 1e-10
    assert np.max(np.abs(H[1, 1])) < 1e-10


def test_time_derivative():
    g = build_grid(2, 8, 6, 0.0, 1.0)
    gf = sample_graph("t * t + x1", g)
    ft = time_derivative(gf.f, g.dt)
    assert np.max(np.abs(ft - 2.0 * g.t()[:, None])) < 1e-12


def test_seminorm_of_vertical_translation():
    # grad part vanishes; time part is max |dt|^{(1-alpha)/2} = 1 over a unit span
    g = build_grid(2, 8, 8, 0.0, 1.0)
    est = parabolic_seminorm_estimate(sample_graph("t", g), 0.5)
    assert est.mode == "full"
    assert est.gradient_part == pytest.approx(0.0, abs=1e-12)
    assert est.value == pytest.approx(1.0)


def test_seminorm_stratified_is_seeded():
    g = build_grid(2, 64, 200, 0.0, 1.0)
    gf = sample_graph("pow(abs(x1), 1.5) + t", g)
    a = parabolic_seminorm_estimate(gf, 0.5, max_nodes=2000, seed=3)
    b = parabolic_seminorm_estimate(gf, 0.5, max_nodes=2000, seed=3)
    assert a.mode == "stratified"
    assert a.value == b.value


def test_seminorm_rejects_alpha():
    g = build_grid(2, 8, 4, 0.0, 1.0)
    with pytest.raises(GridError):
        parabolic_seminorm(sample_graph("0", g), 0.0)


def test_ambient_field():
    g = build_grid(2, 8, 4, 0.0, 1.0)
    gf = sample_graph("0.5 * x1", g)
    u = AmbientField.from_strings(["xn", "t"], 2)
    vals = u.on_graph(gf, 4)
    assert vals.shape == (2, 9)
    assert np.allclose(vals[0], gf.f[4])
    assert np.allclose(vals[1], 1.0)
    assert AmbientField.zero(2).is_zero()
    with pytest.raises(GridError):
        AmbientField.from_strings(["0"], 2)
