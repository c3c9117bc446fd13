import numpy as np
import pytest

from app.utils.grid import AmbientField, build_grid, sample_graph
from app.utils.testfn import TestFunction
from app.utils.weakform import (
    BlowupProfile,
    InadmissibleExponents,
    WeakFormError,
    admissibility,
    blowup_residual,
    brakke_residual,
    lpq_norm,
    pde_residual,
    scan_for_violation,
    strong_norms,
    tangent_plane_limit,
    theorem_exponents,
    witness_family,
)

GRIM_REAPER = "t - log(cos(x1))"
REVERSED = "-t - log(cos(x1))"


def test_admissibility():
    assert admissibility(1, 4.0, 4.0).alpha == pytest.approx(0.25)
    with pytest.raises(InadmissibleExponents):
        admissibility(2, 2.0, 2.0)
    with pytest.raises(InadmissibleExponents):
        admissibility(1, 1.5, 8.0)
    with pytest.raises(InadmissibleExponents):
        admissibility(0, 4.0, 4.0)


def test_theorem_exponents():
    ex = theorem_exponents(3, 2.5, 4.0)
    assert ex.p == pytest.approx(10.0)
    assert ex.q == 4.0
    assert ex.alpha == pytest.approx(0.3)
    assert not ex.any_p


def test_theorem_exponents_any_p():
    ex = theorem_exponents(2, 2.5, 4.0)
    assert ex.any_p
    assert ex.p is None
    assert ex.alpha == pytest.approx(0.5)


@pytest.mark.parametrize("args", [
    (3, 2.0, 4.0),   # beta on the threshold n gamma / (2 (gamma - 1))
    (3, 2.5, 2.0),   # gamma not above 2
    (2, 1.3, 40.0),  # beta below 4/3 in the plane
    (4, 2.5, 4.0),
])
def test_theorem_exponents_rejects(args):
    with pytest.raises(InadmissibleExponents):
        theorem_exponents(*args)


def test_lpq_norm_of_constant_forcing():
    gf = sample_graph("0", build_grid(2, 32, 32, 0.0, 1.0))
    assert lpq_norm(gf, AmbientField.from_strings(["0", "1"], 2), 2.0, 2.0) == pytest.approx(np.sqrt(2.0))
    assert lpq_norm(gf, AmbientField.from_strings(["0", "2"], 2), 2.0, 2.0) == pytest.approx(2.0 * np.sqrt(2.0))
    with pytest.raises(InadmissibleExponents):
        lpq_norm(gf, AmbientField.zero(2), 1.0, 2.0)


def test_strong_norms_of_translation():
    gf = sample_graph("t", build_grid(2, 32, 32, 0.0, 1.0))
    sn = strong_norms(gf, 2.0, 2.0, 0.5)
    assert sn.hessian == pytest.approx(0.0, abs=1e-12)
    assert sn.time_derivative > 0.8
    with pytest.raises(WeakFormError):
        strong_norms(gf, 2.0, 2.0, 1.0)


def test_pde_residual_separates_flows():
    g = build_grid(2, 64, 32, 0.0, 0.5)
    u = AmbientField.zero(2)
    assert pde_residual(sample_graph(GRIM_REAPER, g), u).max < 1e-2
    assert pde_residual(sample_graph(REVERSED, g), u).max > 1.0


def test_brakke_support_outside_grid():
    gf = sample_graph(GRIM_REAPER, build_grid(2, 32, 32, 0.0, 0.5))
    phi = TestFunction(center=(0.9,), radius=0.3, time=0.25, time_radius=0.05)
    with pytest.raises(WeakFormError):
        brakke_residual(gf, AmbientField.zero(2), phi)


def test_witness_scan_finds_violation():
    gf = sample_graph(REVERSED, build_grid(2, 32, 64, 0.0, 0.5))
    family = witness_family(gf, 0.25)
    assert len(family) == 75
    scan = scan_for_violation(gf, AmbientField.zero(2), family)
    assert scan.min_total < 0
    assert scan.witness.time == pytest.approx(0.25)


def test_blowup_limit_sign_and_resolution():
    gf = sample_graph(REVERSED, build_grid(2, 128, 256, 0.0, 1.0))
    u = AmbientField.zero(2)
    shape = BlowupProfile(radius=1.0, offset=0.5)
    assert tangent_plane_limit(gf, u, (0.0,), 0.5, shape) > 0
    report = blowup_residual(gf, u, (0.0,), 0.5, [0.2, 0.01], shape)
    assert report.resolvable == [True, False]
    assert report.values[1] is None
    assert len(report.notes) == 1


def test_blowup_limit_vanishes_on_solution():
    gf = sample_graph(GRIM_REAPER, build_grid(2, 128, 256, 0.0, 1.0))
    limit = tangent_plane_limit(gf, AmbientField.zero(2), (0.0,), 0.5, BlowupProfile(offset=0.5))
    assert abs(limit) < 1e-2
