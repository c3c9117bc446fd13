import numpy as np
import pytest
from pydantic import ValidationError

from app.utils.grid import AmbientField, sample_graph
from app.utils.mcfsolve import (
    CFLError,
    SolverConfig,
    SolverError,
    coefficients,
    convergence_study,
    observed_order,
    solve,
)

GRIM_REAPER = "t - log(cos(x1))"


def _run(expr, u, n=2, N=16, t_final=0.25, scheme="semi-implicit", dt=None):
    dt = (2.0 / N) ** 2 if dt is None else dt
    cfg = SolverConfig(scheme=scheme, n=n, N=N, dt=dt, t_final=t_final, boundary="exact")
    truth = sample_graph(expr, cfg.grid()).f
    gf = solve(truth[0], u, cfg, exact=expr)
    return gf, float(np.max(np.abs(gf.f - truth)))


@pytest.mark.parametrize("n", [2, 3])
def test_forced_flat_is_exact(n):
    u = AmbientField.constant([0.0] * (n - 1) + [0.5])
    _, err = _run("0.5 * t", u, n=n, N=8 if n == 3 else 16)
    assert err <= 1e-9


def test_tilted_plane_is_stationary():
    gf, err = _run("0.3 * x1 + 0.1", AmbientField.zero(2))
    assert err <= 1e-9
    assert gf.meta["solver"]["max_principle_ok"]


@pytest.mark.parametrize("n", [2, 3])
def test_translating_tilted_plane_is_exact(n):
    u = AmbientField.constant([0.0] * (n - 1) + [0.5])
    gf, err = _run("x1 + 0.5 * t", u, n=n, N=8 if n == 3 else 16)
    assert err <= 1e-9
    assert gf.meta["solver"]["max_slope"] == pytest.approx(1.0)


def test_grim_reaper_second_order():
    _, coarse = _run(GRIM_REAPER, AmbientField.zero(2), N=16)
    _, fine = _run(GRIM_REAPER, AmbientField.zero(2), N=32)
    assert fine < coarse / 2.5
    assert fine < 1e-2


def test_explicit_scheme_respects_cfl():
    _, err = _run(GRIM_REAPER, AmbientField.zero(2), N=16, scheme="explicit", dt=0.25 * (2.0 / 16) ** 2)
    assert err < 1e-2
    with pytest.raises(CFLError):
        _run(GRIM_REAPER, AmbientField.zero(2), N=16, scheme="explicit", dt=0.01)


def test_observed_order():
    assert observed_order([0.1, 0.05, 0.025], [1e-2, 2.5e-3, 6.25e-4]) == pytest.approx(2.0)


def test_convergence_study_flags_exact_flows():
    study = convergence_study("x1 + 0.5 * t", AmbientField.constant([0.0, 0.5]),
                              [(8, 1 / 16), (16, 1 / 64), (32, 1 / 256)], t_final=0.25)
    assert max(study.errors) <= 1e-9
    assert study.label == "exact"
    assert study.order is None
    with pytest.raises(SolverError):
        convergence_study(GRIM_REAPER, AmbientField.zero(2), [(8, 0.01), (16, 0.01)])


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(N=16, dt=0.01, t_final=1.0, tol=1e-6)
    with pytest.raises(ValidationError):
        SolverConfig(N=16, dt=0.0, t_final=1.0)
    with pytest.raises(ValidationError):
        SolverConfig(N=16, dt=0.01, t_final=1.0, scheme="crank-nicolson")


def test_coefficients_are_uniformly_elliptic():
    x = np.linspace(-1, 1, 17)
    a, grads = coefficients(np.sin(3 * x), 2.0 / 16)
    slope2 = grads[0] ** 2
    assert np.allclose(a[0, 0], 1.0 / (1.0 + slope2))
