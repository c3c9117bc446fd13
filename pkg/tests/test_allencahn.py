import numpy as np
import pytest

import app.utils.allencahn as allencahn
from app.utils.allencahn import (
    BoxGrid,
    DoubleWell,
    GraphicalityError,
    RunConfig,
    TimestepError,
    WellError,
    ac_step,
    check_timestep,
    circle_distance,
    energy_budget,
    extract_graph,
    extract_radius,
    initial_profile,
    run_and_extract,
    sigma_and_phi,
    slab_distance,
    standing_equipartition,
    tderiv_bound_check,
    velocity_formula_check,
)
from app.utils.grid import AmbientField
from app.utils.testfn import TestFunction

EPS = 0.125
DT = 0.003


def test_standard_well_constants():
    well = DoubleWell.standard()
    well.validate()
    sigma, table = sigma_and_phi(well)
    assert sigma == pytest.approx(4.0 / 3.0, abs=1e-8)
    assert float(table(np.array(0.0))) == pytest.approx(0.5, abs=1e-10)
    assert float(table(np.array(-1.0))) == pytest.approx(0.0, abs=1e-12)
    assert float(table(np.array(1.0))) == pytest.approx(1.0, abs=1e-12)
    assert well.max_curvature == pytest.approx(6.0 * 1.05 ** 2 - 2.0)


def test_custom_well_validation():
    with pytest.raises(WellError):
        DoubleWell.from_strings("(1 - s*s)", "-2*s", "-2", 0.0, 0.8, 1.84)
    well = DoubleWell.from_strings("0.5 * pow(1 - s*s, 2)", "2*s*s*s - 2*s", "6*s*s - 2", 0.0, 0.8, 1.84)
    assert sigma_and_phi(well)[0] == pytest.approx(4.0 / 3.0, abs=1e-8)


def test_custom_well_derivatives_are_symbolic():
    well = DoubleWell.from_strings("0.5 * (1 - s^2)^2")
    ref = DoubleWell.standard()
    s = np.linspace(-1.0, 1.0, 9)
    assert well.dW(s) == pytest.approx(ref.dW(s), abs=1e-12)
    assert well.d2W(s) == pytest.approx(ref.d2W(s), abs=1e-12)
    with pytest.raises(WellError, match="does not match"):
        DoubleWell.from_strings("0.5 * (1 - s^2)^2", "2*s*s*s")


def test_slab_distance_is_periodic():
    box = BoxGrid(2, 16)
    d = slab_distance(box, 0.5)
    xn = box.x()
    col = d[0]
    assert col[list(xn).index(0.0)] == pytest.approx(0.5)
    assert col[0] == pytest.approx(-0.5)
    assert col[np.argmin(np.abs(xn - 0.5))] == pytest.approx(0.0, abs=1e-12)


def test_initial_profile_is_tanh():
    d = np.linspace(-0.3, 0.3, 7)
    assert initial_profile(d, 0.1) == pytest.approx(np.tanh(d / 0.1))


def test_timestep_gate():
    box = BoxGrid(2, 16)
    with pytest.raises(TimestepError):
        check_timestep(box, DoubleWell.standard(), 0.1, 0.01)
    vel = np.full((2,) + box.shape, 50.0)
    with pytest.raises(TimestepError, match="CFL"):
        check_timestep(box, DoubleWell.standard(), 0.1, 0.002, vel)


def test_run_must_tile_the_interval():
    box = BoxGrid(2, 32)
    phi0 = initial_profile(circle_distance(box, 0.5), EPS)
    with pytest.raises(TimestepError):
        run_and_extract(phi0, None, EPS, RunConfig(dt=DT, t_final=0.03, output_every=4), box)


@pytest.fixture(scope="module")
def circle_run():
    box = BoxGrid(2, 32)
    phi0 = initial_profile(circle_distance(box, 0.5), EPS)
    pf, gf = run_and_extract(phi0, None, EPS, RunConfig(dt=DT, t_final=0.03, output_every=1), box)
    return box, pf


def test_energy_dissipates(circle_run):
    _, pf = circle_run
    assert len(pf.times) == 11
    assert np.max(np.diff(pf.energies)) <= 1e-12
    assert pf.meta["max_abs_phi"] <= 1.0 + 1e-12


def test_circle_radius_is_tracked(circle_run):
    box, pf = circle_run
    assert extract_radius(pf.phi[0], box) == pytest.approx(0.5, abs=box.h)
    assert extract_radius(pf.phi[-1], box) < extract_radius(pf.phi[0], box)


def test_tderiv_chain_holds(circle_run):
    _, pf = circle_run
    psi = TestFunction(center=(0.5,), radius=0.3, height=0.0, time=0.015, time_radius=0.01)
    tb = tderiv_bound_check(pf, psi)
    assert tb.lhs > 0
    assert tb.chain_ok
    assert tb.constant > 0
    assert tb.energy_budget == pytest.approx(energy_budget(pf))
    assert tb.bound_ok
    assert tb.constant <= tb.middle_constant * (1.0 + 1e-12)
    assert tb.middle_constant <= tb.bound_constant * (1.0 + 1e-9)


def test_flat_interface_extraction():
    box = BoxGrid(2, 32)
    phi = initial_profile(slab_distance(box, 0.0), EPS)
    assert np.max(np.abs(extract_graph(phi, box))) < 1e-12


def test_forced_flat_by_parts_identity():
    box = BoxGrid(2, 32)
    u = AmbientField.constant([0.0, 0.2])
    phi0 = initial_profile(slab_distance(box, 0.0), EPS)
    pf, gf = run_and_extract(phi0, u, EPS, RunConfig(dt=DT, t_final=0.03, output_every=1, extract="graph"), box)
    assert gf is not None
    assert gf.f.shape == (11, 33)
    assert gf.f[-1, 16] > gf.f[0, 16] + 0.003
    psi = TestFunction(center=(0.0,), radius=0.3, height=0.0, time=0.015, time_radius=0.01)
    vf = velocity_formula_check(pf, psi, gf)
    assert vf.gap <= 1e-12
    assert vf.A > 0
    assert vf.sharp > 0
    assert energy_budget(pf) is None
    assert tderiv_bound_check(pf, psi).bound_ok is None


def test_step_rejects_coarse_dt():
    box = BoxGrid(2, 16)
    with pytest.raises(TimestepError):
        ac_step(np.zeros(box.shape), None, 0.1, 0.05, box)


def test_graphicality_is_monitored_every_step(monkeypatch):
    seen = []

    def watch(phi, box, t=None):
        seen.append(t)
        if t is not None and t > 0.01:
            raise GraphicalityError(f"lost at t={t:.4g}", time=t)
        return extract_graph(phi, box, t)

    monkeypatch.setattr(allencahn, "extract_graph", watch)
    box = BoxGrid(2, 32)
    phi0 = initial_profile(slab_distance(box, 0.0), EPS)
    with pytest.raises(GraphicalityError) as info:
        run_and_extract(phi0, None, EPS, RunConfig(dt=DT, t_final=0.03, output_every=5, extract="graph"), box)
    # 0.012 lies between the snapshots at 0 and 0.015
    assert info.value.time == pytest.approx(0.012)
    assert len(seen) == 5


def test_standing_profile_equipartition_decays():
    coarse = standing_equipartition(0.1, 80)
    fine = standing_equipartition(0.05, 320)
    assert coarse > 0
    assert fine <= 0.7 * coarse
