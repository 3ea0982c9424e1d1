import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import L, single_mode, small_graphs
from msflow import curve as cv
from msflow import diagnostics as dg
from msflow import evolution, potentials


def _setup(g):
    # graph nodes keep the distance density exactly neutral, as in the flow
    c = cv.graph_to_curve(g, nodes="graph")
    return c, potentials.assemble(c)


def test_flat_line_quantities(flat64):
    c, ops = flat64
    assert dg.dissipation(c, ops) == 0.0
    assert dg.squared_distance(c, ops) == 0.0
    rep = dg.hed_check(0.0, 0.0, 0.0, 0.0, 0.0)
    assert rep.worst_margin == 0.0 and rep.ebar_ok and rep.refined_ok


def test_dissipation_single_mode():
    a = 0.01
    c, ops = _setup(single_mode(a))
    assert dg.dissipation(c, ops) == pytest.approx(a * a * L, rel=1e-3)


def test_dissipation_two_paths():
    c, ops = _setup(cv.PeriodicGraph.from_modes(L, 128, [(1, 0.2, 0.0), (3, 0.05, 1.0)]))
    assert dg.dissipation(c, ops) == pytest.approx(dg.dissipation_spectral(ops), rel=1e-9)


def test_squared_distance_single_mode():
    a = 0.01
    c, ops = _setup(single_mode(a))
    H = dg.squared_distance(c, ops)
    assert H == pytest.approx(a * a * L / 4, rel=1e-3)
    assert dg.squared_distance(c, ops, path="spectral") == pytest.approx(H, rel=1e-9)


def test_squared_distance_scales_quadratically():
    H1 = dg.squared_distance(*_setup(single_mode(0.005)))
    H2 = dg.squared_distance(*_setup(single_mode(0.01)))
    assert H2 / H1 == pytest.approx(4.0, rel=1e-4)


def test_neutrality_is_enforced():
    c, _ = _setup(single_mode(0.1, n=64))
    shifted = cv.SampledCurve(c.nodes, c.positions + np.array([0.0, 0.05]), c.angle,
                              c.curvature, c.normal, c.weights, c.period_arclength, c.period)
    ops = potentials.assemble(shifted)
    with pytest.raises(dg.NeutralityError):
        dg.squared_distance(shifted, ops)


def test_single_mode_hed_ratio_tends_to_half():
    devs = []
    for a in (0.04, 0.02, 0.01):
        c, ops = _setup(single_mode(a, n=128))
        E, D, H = cv.excess_energy(c), dg.dissipation(c, ops), dg.squared_distance(c, ops)
        devs.append(abs(E / math.sqrt(H * D) - 0.5))
    # deviation shrinks quadratically in the amplitude
    orders = [math.log2(x / y) for x, y in zip(devs, devs[1:])]
    assert min(orders) > 1.9


@settings(max_examples=25, deadline=None)
@given(small_graphs(n=64, max_slope=0.4))
def test_static_hed(g):
    c, ops = _setup(g)
    E, D, H = cv.excess_energy(c), dg.dissipation(c, ops), dg.squared_distance(c, ops)
    rep = dg.hed_check(E, cv.nonoriented_excess(c), H, D, float(np.max(np.abs(c.angle))))
    assert rep.ebar_margin >= -1e-8
    assert rep.angle_margin >= -1e-8


def test_refined_hed_constant_calibration():
    # the calibrated constant covers random multimode graphs with eps up to 0.2
    worst = math.inf
    for seed in range(6):
        for eps0 in (0.05, 0.2):
            g = evolution.multimode_graph(L, 64, eps0, seed=seed)
            c, ops = _setup(g)
            E, D, H = cv.excess_energy(c), dg.dissipation(c, ops), dg.squared_distance(c, ops)
            rep = dg.hed_check(E, cv.nonoriented_excess(c), H, D, float(np.max(np.abs(c.angle))))
            worst = min(worst, rep.refined_margin)
    assert worst >= 0


def test_hed_check_angle_branch():
    rep = dg.hed_check(1.0, 1.0, 4.0, 1.0, 3.5)
    assert rep.angle_margin is None and rep.angle_ok is None


def test_scale_invariance_of_eps():
    g = cv.PeriodicGraph.from_modes(L, 128, [(1, 0.2, 0.0), (2, 0.05, 1.0)])
    c, ops = _setup(g)
    eps = dg.scale_invariant(cv.excess_energy(c), dg.dissipation(c, ops))
    for lam in (0.5, 2.0):
        cl, opsl = _setup(cv.PeriodicGraph(lam * L, lam * g.heights))
        epsl = dg.scale_invariant(cv.excess_energy(cl), dg.dissipation(cl, opsl))
        assert epsl == pytest.approx(eps, rel=1e-6)


def test_curvature_bound_report():
    a = 0.01
    c, ops = _setup(single_mode(a))
    E, D = cv.excess_energy(c), dg.dissipation(c, ops)
    rep = dg.curvature_bound_report(c, ops, E, D)
    r = rep.ratios
    assert all(np.isfinite(v) for v in r.values())
    assert r[0.5] == pytest.approx(1.0, rel=1e-9)


def test_curvature_bound_ratios_uniform_over_sweep():
    ratios = []
    for a in (0.005, 0.01, 0.02, 0.04, 0.08, 0.16):
        c, ops = _setup(single_mode(a, n=128))
        rep = dg.curvature_bound_report(c, ops, cv.excess_energy(c), dg.dissipation(c, ops))
        ratios.append([rep.ratios[s] for s in (-1.0, -0.5, 0.0)])
    ratios = np.array(ratios)
    assert np.max(ratios) / np.min(ratios) < 3.0


def test_flatness_control():
    rep = dg.flatness_control_check(0.0, 0.0, 0.0)
    assert rep.bmo_ratio == 0 and rep.angle_ratio == 0 and not rep.flagged
    assert dg.flatness_control_check(0.1, 0.0, 0.0).flagged


def test_flatness_control_sweep_bounded():
    values = []
    for a in (0.04, 0.02, 0.01, 0.005):
        c, ops = _setup(single_mode(a, n=128))
        eps = dg.scale_invariant(cv.excess_energy(c), dg.dissipation(c, ops))
        bmo = cv.bmo_normal(c)
        rep = dg.flatness_control_check(bmo, float(np.max(np.abs(c.angle))), eps)
        values.append((rep.bmo_ratio, rep.angle_ratio))
        assert bmo <= 2 * float(np.max(np.abs(c.angle))) * (1 + a)
    values = np.array(values)
    assert np.ptp(values[:, 0]) / np.max(values[:, 0]) < 0.01
    assert np.ptp(values[:, 1]) / np.max(values[:, 1]) < 0.01


def test_auxiliary_F():
    assert dg.auxiliary_F(0.0, 2.0, 1.0, 1.0, 0.5) == 2.0
    t, H, E, D = 0.7, 1.3, 0.4, 0.2
    assert dg.auxiliary_F(t, H, E, D, 1.0) == pytest.approx(0.5 * H + t * E + 0.5 * t * t * D)
    with pytest.raises(ValueError):
        dg.auxiliary_F(t, H, E, D, 0.0)


def test_auxiliary_F_nonincreasing_linear():
    from msflow import linearized as lin

    s0 = lin.SpectralState.single_mode(L, 64, 1, 0.01)
    t = np.linspace(0, 3, 300)
    E, D, H, _ = lin.quantities_at(s0, t)
    F = np.array([dg.auxiliary_F(*v, math.sqrt(2.0)) for v in zip(t, H, E, D)])
    assert np.all(np.diff(F) <= 1e-18)


def test_record_and_csv_round_trip(tmp_path):
    c, ops = _setup(single_mode(0.05, n=64))
    rec = dg.record(c, ops, t=0.25, alpha=0.5)
    assert rec.eps == pytest.approx(dg.scale_invariant(rec.E, rec.D), rel=0)
    assert min(rec.E, rec.Ebar, rec.D, rec.H, rec.eps) >= 0
    path = tmp_path / "t.csv"
    dg.write_csv(path, [rec, rec], model="linear")
    header = path.read_text().splitlines()[0].split(",")
    assert header == list(dg.CSV_COLUMNS) + ["model"]
    back = dg.read_csv(path)
    assert back[0] == rec
