import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import L, single_mode, small_graphs
from msflow import curve as cv
from msflow import potentials as pt


def _random_meanzero(ops, rng, decay=None):
    n = ops.curve.n
    decay = rng.uniform(0.0, 2.0) if decay is None else decay
    k = np.abs(np.fft.fftfreq(n, 1 / n))
    coef = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (1.0 + k) ** -decay
    return ops.meanzero_proj(np.real(np.fft.ifft(coef)) * n)


def test_flat_spectrum(flat256):
    _, ops = flat256
    lam = ops.N_eigs[0]
    assert lam[0] == 0.0
    m = np.arange(1, 65)
    exact = np.repeat(2.0 * m, 2)
    assert np.max(np.abs(lam[1:129] - exact) / exact) < 1e-8


def test_flat_spectrum_other_period():
    P = 3.0
    c = cv.graph_to_curve(cv.PeriodicGraph(P, np.zeros(64)))
    lam = pt.assemble(c).N_eigs[0]
    exact = np.repeat(2 * 2 * np.pi * np.arange(1, 17) / P, 2)
    assert np.max(np.abs(lam[1:33] - exact) / exact) < 1e-8


def test_flat_ksharp_vanishes(flat64):
    _, ops = flat64
    assert np.max(np.abs(ops.Ksharp_mat)) < 1e-15
    f = ops.meanzero_proj(np.random.default_rng(0).standard_normal(64))
    assert np.max(np.abs(ops.apply_M(f))) < 1e-15


def test_ksharp_norm_decreases_with_amplitude():
    norms = [pt.assemble(cv.graph_to_curve(single_mode(a, n=64))).ksharp_norm()
             for a in (0.2, 0.1, 0.05, 0.025)]
    assert all(x > y for x, y in zip(norms, norms[1:]))
    assert norms[-1] < 0.05


def test_ksharp_annihilates_constants_after_weighting():
    # weighted column sums of K# vanish: int K#(x, y) dsigma(x) = 0 for a closed periodic cell
    c = cv.graph_to_curve(cv.PeriodicGraph.from_modes(L, 128, [(1, 0.2, 0.0), (2, 0.1, 1.0)]))
    K = pt.assemble(c).Ksharp_mat
    sums = c.weights @ K
    assert np.max(np.abs(sums)) < 1e-12


def test_apply_S_zero(flat64):
    _, ops = flat64
    assert np.all(ops.apply_S(np.zeros(64)) == 0)


def test_apply_S_flat_cosine(flat256):
    c, ops = flat256
    for k in (1, 3, 10):
        f = np.cos(k * c.positions[:, 0])
        assert np.max(np.abs(ops.apply_S(f) - f / (2 * k))) < 1e-10


def test_apply_S_rejects_nonzero_mean(flat64):
    _, ops = flat64
    with pytest.raises(pt.MeanZeroError):
        ops.apply_S(np.ones(64))


def test_apply_N_flat_sine(flat256):
    c, ops = flat256
    for k in (1, 4, 20):
        g = np.sin(k * c.positions[:, 0])
        assert np.max(np.abs(ops.apply_N(g) - 2 * k * g)) < 1e-8 * 2 * k


def test_apply_N_constants(flat64):
    _, ops = flat64
    assert np.max(np.abs(ops.apply_N(np.full(64, 3.0)))) < 1e-12


def test_S_N_round_trip():
    c = cv.graph_to_curve(cv.PeriodicGraph.from_modes(L, 128, [(1, 0.3, 0.0), (3, 0.05, 2.0)]))
    ops = pt.assemble(c)
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = rng.standard_normal(128)
        back = ops.apply_S(ops.apply_N(g))
        # S N g reproduces g up to an additive constant
        diff = back - g
        diff -= c.mean(diff)
        assert c.l2(diff) <= 1e-9 * c.l2(g)


@settings(max_examples=20, deadline=None)
@given(small_graphs(n=64), st.integers(0, 2**31 - 1))
def test_operator_structure(g, seed):
    c = cv.graph_to_curve(g)
    ops = pt.assemble(c)
    assert ops.asymmetry < 1e-10
    rng = np.random.default_rng(seed)
    f, h = _random_meanzero(ops, rng), _random_meanzero(ops, rng)
    # symmetry and positivity of N
    a, b = c.integrate(ops.apply_N(f) * h), c.integrate(f * ops.apply_N(h))
    assert abs(a - b) <= 1e-10 * c.l2(ops.apply_N(f)) * c.l2(h)
    assert c.integrate(f * ops.apply_N(f)) > 0
    assert c.integrate(f * ops.apply_S(f)) > 0
    # one zero eigenvalue, the rest positive
    lam = ops.N_eigs[0]
    assert lam[0] == 0.0 and lam[1] > 0
    # norm scales
    half = ops.fractional_norm(f, 0.5) ** 2
    assert half == pytest.approx(c.integrate(f * ops.apply_N(f)), rel=1e-10)


def test_fractional_norm_flat_sine(flat256):
    c, ops = flat256
    k = 3
    g = np.sin(k * c.positions[:, 0])
    for s in (-1.0, -0.5, 0.0, 0.5, 1.0):
        assert ops.fractional_norm(g, s) == pytest.approx((2 * k) ** s * math.sqrt(L / 2),
                                                          rel=1e-9)


def test_fractional_norm_range(flat64):
    _, ops = flat64
    with pytest.raises(ValueError):
        ops.fractional_norm(np.zeros(64), 1.5)


@settings(max_examples=30, deadline=None)
@given(small_graphs(n=64), st.integers(0, 2**31 - 1))
def test_interpolation_inequalities(g, seed):
    ops = pt.assemble(cv.graph_to_curve(g))
    rng = np.random.default_rng(seed)
    for _ in range(20):
        m = pt.interpolation_margins(ops, _random_meanzero(ops, rng))
        assert min(m.values()) >= 0.0


def test_M_adjoint():
    c = cv.graph_to_curve(cv.PeriodicGraph.from_modes(L, 64, [(1, 0.3, 0.0), (2, 0.1, 1.0)]))
    ops = pt.assemble(c)
    rng = np.random.default_rng(2)
    f = ops.meanzero_proj(rng.standard_normal(64))
    g = rng.standard_normal(64)
    lhs = c.integrate(ops.apply_M(f) * g)
    rhs = c.integrate(f * ops.apply_M_adjoint(g))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_M_trend_with_amplitude():
    rng = np.random.default_rng(3)
    ratios = []
    for a in (0.16, 0.08, 0.04, 0.02):
        c = cv.graph_to_curve(single_mode(a, n=64))
        ops = pt.assemble(c)
        f = _random_meanzero(ops, rng, decay=1.0)
        ratios.append(c.l2(ops.apply_M(f)) / c.l2(f))
    assert all(x > y for x, y in zip(ratios, ratios[1:]))


def test_tangential_derivative_norm():
    c = cv.graph_to_curve(cv.PeriodicGraph(L, np.zeros(128)))
    assert pt.tangential_derivative_norm(c, np.full(128, 2.0)) < 1e-13
    k = 5
    g = np.sin(k * c.positions[:, 0])
    assert pt.tangential_derivative_norm(c, g) == pytest.approx(k * math.sqrt(L / 2), rel=1e-12)


def test_eqnorm_flat_equality_and_trend(flat64):
    c, ops = flat64
    rng = np.random.default_rng(4)
    x = c.positions[:, 0]
    # band-limited below Nyquist, where the spectral derivative is exact
    g = sum(rng.standard_normal() / m * np.sin(m * x + rng.uniform(0, 6)) for m in range(1, 21))
    assert pt.eqnorm_gap(ops, g) < 1e-10
    gaps = []
    for a in (0.2, 0.1, 0.05):
        ops_a = pt.assemble(cv.graph_to_curve(single_mode(a, n=64)))
        h = np.cos(3 * ops_a.curve.nodes * L / ops_a.curve.period_arclength)
        gaps.append(pt.eqnorm_gap(ops_a, ops_a.meanzero_proj(h)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_sup_interpolation():
    c = cv.graph_to_curve(cv.PeriodicGraph.from_modes(L, 128, [(1, 0.2, 0.0)]))
    x = c.nodes * L / c.period_arclength
    for g in (np.sin(x), np.sin(3 * x) + 0.5 * np.cos(x), np.sin(x) ** 3):
        lhs, rhs = pt.sup_interpolation(c, g)
        assert lhs <= rhs


def test_assemble_guards():
    open_curve = cv.spiral_fixture(0.2, 1.0, 64)
    with pytest.raises(pt.FlatnessError):
        pt.assemble(open_curve)


def test_dump_and_load(tmp_path):
    c = cv.graph_to_curve(single_mode(0.2, n=32))
    ops = pt.assemble(c)
    path = tmp_path / "ops.bin"
    ops.dump(path)
    back = pt.load(path, c)
    assert np.array_equal(back.S_mat, ops.S_mat)
    assert np.array_equal(back.Ksharp_mat, ops.Ksharp_mat)
    other = cv.graph_to_curve(single_mode(0.1, n=32))
    with pytest.raises(ValueError):
        pt.load(path, other)


def test_assembly_is_deterministic():
    c = cv.graph_to_curve(single_mode(0.2, n=64))
    assert np.array_equal(pt.assemble(c).S_mat, pt.assemble(c).S_mat)
