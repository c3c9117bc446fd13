import numpy as np
import pytest

from app.utils.grid import build_grid, sample_graph
from app.utils.mollify import (
    MollifierKernel,
    MollifyError,
    eta,
    eta_derivatives,
    kernel_moments,
    lemma_bounds,
    mollify_graph,
    projection_maps,
    signed_distance,
)

GRIM_REAPER = "t - log(cos(x1))"


@pytest.mark.parametrize("n", [2, 3])
def test_stencil_mass(n):
    k = MollifierKernel(n)
    w, raw = k.stencil(0.2, 0.0125, 0.00125)
    assert np.sum(w) == pytest.approx(1.0)
    assert raw == pytest.approx(1.0, abs=1e-4)
    assert np.allclose(w, w[::-1])
    assert kernel_moments(n)[0] > 0


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("eps", [1.0, 0.5])
def test_kernel_normalization_matches_moments(n, eps):
    k = MollifierKernel(n)
    C, m2, _ = kernel_moments(n)
    assert k.C == C
    # support of rho^eps is |y| < eps, |s| < eps^2; the bump is smooth so the node sum converges fast
    m = 121
    ys = np.linspace(-eps, eps, m)
    ss = np.linspace(-eps ** 2, eps ** 2, m)
    axes = np.meshgrid(ss, *([ys] * (n - 1)), indexing="ij")
    y = np.stack(axes[1:], axis=-1)
    cell = (ys[1] - ys[0]) ** (n - 1) * (ss[1] - ss[0])
    rho = k.value(eps, y, axes[0])
    assert np.sum(rho) * cell == pytest.approx(1.0, abs=1e-6)
    assert np.sum(rho * axes[1] ** 2) * cell == pytest.approx(m2 * eps ** 2, rel=1e-5)
    assert k.second_moment(eps) == pytest.approx(m2 * eps ** 2)


def test_eta_clip():
    eps = 0.1
    s = np.array([-0.5, -0.05, 0.0, 0.07, 0.1, 0.3])
    e0, e1, e2 = eta_derivatives(s, eps)
    assert e0 == pytest.approx([-0.14, -0.05, 0.0, 0.07, 0.1, 0.14])
    assert e1 == pytest.approx([0.0, 1.0, 1.0, 1.0, 1.0, 0.0])
    assert not np.any(e2)
    grid = np.linspace(-0.3, 0.3, 6001)
    assert np.all(np.diff(eta(grid, eps)) >= 0)
    # C^1 across the transition points
    for a in (eps, 2 * eps):
        lo, hi = eta_derivatives(np.array([a - 1e-9, a + 1e-9]), eps)[1]
        assert abs(hi - lo) < 1e-6


def test_resolution_gates():
    g = build_grid(2, 40, 40, 0.0, 1.0)
    gf = sample_graph("x1", g)
    with pytest.raises(MollifyError, match="2 hx"):
        mollify_graph(gf, 0.08)
    with pytest.raises(MollifyError, match="2 dt"):
        mollify_graph(gf, 0.2)


def test_affine_flow_is_reproduced():
    g = build_grid(2, 40, 100, 0.0, 1.0)
    gf = sample_graph("0.3 * x1 + 0.2 * t + 0.1", g)
    mg = mollify_graph(gf, 0.2)
    diff = np.abs(mg.feps - gf.f)[mg.mask]
    assert diff.size > 0
    assert np.max(diff) < 1e-12
    assert np.all(np.isnan(mg.feps[0]))


def test_offgrid_evaluation_agrees_at_nodes():
    g = build_grid(2, 40, 100, 0.0, 1.0)
    mg = mollify_graph(sample_graph("0.2 * sin(2 * x1) + 0.1 * t", g), 0.2)
    x = g.x()
    pts = np.array([[x[20]], [x[25]], [x[10]]])
    val = mg.evaluate(pts, 50, order=0)[0]
    assert val == pytest.approx(mg.feps[50, [20, 25, 10]], abs=1e-12)
    with pytest.raises(MollifyError):
        mg.evaluate(pts, 0)
    with pytest.raises(MollifyError):
        mg.evaluate(np.array([[0.95]]), 50)


def test_lemma_bounds_hold_for_hoelder_flow():
    g = build_grid(2, 80, 40, 0.0, 0.2)
    mg = mollify_graph(sample_graph("pow(abs(x1), 1.5)", g), 0.2)
    lb = lemma_bounds(mg, 0.5)
    assert lb.seminorm >= 2.0
    assert lb.holds


def test_signed_distance_to_flat_graph():
    g = build_grid(2, 40, 100, 0.0, 1.0)
    mg = mollify_graph(sample_graph("0.1", g), 0.2)
    X = np.array([[0.0, 0.15], [0.2, 0.0], [0.0, 0.6]])
    cd = signed_distance(mg, X, 50)
    assert cd.tilde == pytest.approx([0.05, -0.1, 0.5], abs=1e-10)
    assert cd.value == pytest.approx([0.05, -0.1, 0.28], abs=1e-10)
    assert cd.gradient[0] == pytest.approx([0.0, 1.0], abs=1e-8)
    assert cd.gradient[2] == pytest.approx([0.0, 0.0], abs=1e-12)
    assert np.max(np.abs(cd.hessian[:2])) < 1e-6
    single = signed_distance(mg, np.array([0.0, 0.15]), 50)
    assert float(single.tilde) == pytest.approx(0.05, abs=1e-10)


def test_distance_time_derivative_of_rising_plane():
    # d~ = xn - 0.2 t above a flat graph rising at speed 0.2
    g = build_grid(2, 40, 400, 0.0, 1.0)
    mg = mollify_graph(sample_graph("0.2 * t", g), 0.2)
    cd = signed_distance(mg, np.array([[0.0, 0.15]]), 200)
    assert cd.tilde[0] == pytest.approx(0.05, abs=1e-10)
    assert cd.dt[0] == pytest.approx(-0.2, abs=5e-3)


def test_projection_round_trip():
    g = build_grid(2, 40, 400, 0.0, 1.0)
    gf = sample_graph(GRIM_REAPER, g)
    pm = projection_maps(mollify_graph(gf, 0.2), gf, 200)
    assert pm.x.shape[0] > 0
    assert pm.roundtrip <= 1e-8
    assert pm.max_gradF_minus_I < 0.5
