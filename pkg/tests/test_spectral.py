from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dicke_lab.closedsys import ground_state_fluctuations
from dicke_lab.errors import DomainError, SingularityError
from dicke_lab.fitpipe import fit_power_law
from dicke_lab.params import TWO_PI, PhysicalParams
from dicke_lab.spectral import (EffectiveModel, atomic_quadrature_variance, correlation_curve,
                                density_fluctuation_variance, determinant, dominant_frequency, g1, g2,
                                incoherent_photon_number, matrix_elements, matrix_M, overlap_B_alt,
                                overlap_integrals)


def model(p, x, gamma_hz=250.0, **kw):
    kw.setdefault("n_B", 0.0)
    return EffectiveModel.from_params(p, x, TWO_PI * gamma_hz, **kw)


# -- matrix and elements ---------------------------------------------------


def test_matrix_layout(p):
    m = model(p, 0.0, 0.0, determinant_mode="exact")
    M = matrix_M(123.0, m)
    assert np.all(M[:2, 2:] == 0) and np.all(M[2:, :2] == 0)
    assert matrix_M(0.0, m)[2, 2] == pytest.approx(1j * p.omega0)


def test_matrix_matches_oracle(p):
    m = model(p, 0.8, 300.0, determinant_mode="exact")
    for nu in (-1e5, 0.0, 3e4, 7e7):
        ref = oracles.langevin_matrix(nu, m.omega, m.omega0, m.lam, m.kappa, m.gamma)
        np.testing.assert_array_equal(matrix_M(nu, m), ref)


def test_elements_against_frozen_inverse(p, frozen):
    ref = frozen["inverse_first_row"]
    m = model(p, ref["x"], ref["gamma"] / TWO_PI, determinant_mode="exact")
    for nu, row in zip(ref["nu"], ref["rows"]):
        want = np.array([complex(*v) for v in row])
        e = matrix_elements(nu, m)
        got = np.array([e.m11, e.m12, e.m13, e.m14])
        assert np.max(np.abs(got - want) / np.abs(want)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.0, 3000.0), st.floats(-1e8, 1e8))
def test_elements_against_inversion(x, gamma_hz, nu):
    p = PhysicalParams()
    m = model(p, x, gamma_hz, determinant_mode="exact")
    want = oracles.inverse_first_row(nu, m.omega, m.omega0, m.lam, m.kappa, m.gamma)
    e = matrix_elements(nu, m)
    got = np.array([e.m11, e.m12, e.m13, e.m14])
    scale = np.abs(want).max()
    assert np.max(np.abs(got - want)) < 1e-10 * scale


def test_element_symmetries(p):
    m = model(p, 0.9, 200.0, determinant_mode="exact")
    nu = np.linspace(-3e5, 3e5, 11)
    e, r = matrix_elements(nu, m), matrix_elements(-nu, m)
    np.testing.assert_allclose(r.m12 * r.D, e.m12 * e.D, rtol=1e-14)
    np.testing.assert_allclose(r.D, np.conj(e.D), rtol=1e-13)
    zero = matrix_elements(nu, model(p, 0.0, 200.0))
    assert np.all(zero.m12 == 0) and np.all(zero.m13 == 0) and np.all(zero.m14 == 0)


def test_soft_mode_determinant_close_to_exact(p):
    ex = model(p, 0.9, 200.0, determinant_mode="exact")
    ap = model(p, 0.9, 200.0)
    ws = ex.omega_s
    a, b = abs(matrix_elements(ws, ex).m12) ** 2, abs(matrix_elements(ws, ap).m12) ** 2
    assert a == pytest.approx(b, rel=0.01)


def test_singular_at_threshold(p):
    m = model(p, 1.0, 0.0, T=0.0, determinant_mode="exact")
    with pytest.raises(SingularityError):
        model(p, 1.0, 0.0)  # n_th diverges at omega_s = 0
    assert abs(determinant(0.0, m)) < 1e-6 * abs(determinant(1e3, m))
    with pytest.raises(SingularityError):
        m.check_stable()
    with pytest.raises(SingularityError):
        incoherent_photon_number(m)


# -- overlaps and correlators -------------------------------------------------


def test_overlaps_vanish_without_coupling(p):
    A, B, C, D = overlap_integrals(0.0, model(p, 0.0))
    assert A == 0 and B == 0 and C == 0 and D == 0


def test_overlap_A_even_and_real(p):
    m = model(p, 0.9, 200.0)
    for tau in (0.0, 50e-6):
        A = overlap_integrals(tau, m)[0]
        assert isinstance(A, float)
        assert overlap_integrals(-tau, m)[0] == pytest.approx(A, rel=1e-7)


def test_two_B_forms_agree(p):
    m = model(p, 0.9, 250.0)
    for tau in (0.0, 30e-6):
        B1 = overlap_integrals(tau, m)[1]
        B2 = overlap_B_alt(tau, m)
        assert abs(B1 - B2) <= 0.01 * abs(B1)


def test_g1_limits(p):
    assert g1(0.0, model(p, 0.0)) == 0
    m = model(p, 0.8, 250.0, zeta=60.0)
    a2 = abs(m.alpha) ** 2
    assert abs(g1(20.0 / m.gamma, m) - a2) <= 1e-3 * a2
    assert g1(0.0, m).real >= a2


def test_g1_tracks_soft_mode(p):
    m = model(p, 0.9, 250.0)
    c = correlation_curve(m, 40.0 / m.omega_s, 4001)
    assert dominant_frequency(c.tau, c.g1.real) == pytest.approx(m.omega_s, rel=0.02)


def test_coherent_only_is_flat(p):
    m = EffectiveModel(omega=p.omega, omega0=p.omega0, lam=0.0, kappa=p.kappa, gamma=100.0, alpha=0.3 + 0.1j)
    assert np.max(np.abs(g2(np.linspace(0, 1e-3, 7), m) - 1)) < 1e-6


def test_thermal_bunching(p):
    for x in (0.3, 0.7, 0.95):
        m = model(p, x, 250.0)
        assert g2(0.0, m) >= 2.0


def test_long_delay_factorizes(p):
    for x, zeta in ((0.6, 0.0), (0.9, 60.0)):
        m = model(p, x, 250.0, zeta=zeta, n_B=p.n_background)
        assert abs(g2(40.0 / m.gamma, m) - 1) < 1e-3


def test_fft_matches_quadrature(p):
    m = model(p, 0.85, 300.0, zeta=40.0, n_B=p.n_background)
    tau = np.linspace(0, 2e-3, 201)
    q = g2(tau[::25], m, method="quad")
    f = g2(tau, m, method="fft")[::25]
    np.testing.assert_allclose(f, q, rtol=1e-6)


@pytest.mark.parametrize("x", [0.0, 0.3, 0.6, 0.9, 0.99])
def test_g2_positive_and_continuous(p, x):
    m = model(p, x, 250.0, n_B=p.n_background)
    c = correlation_curve(m, 20.0 / p.omega0, 2001)
    assert np.all(c.g2 > 0)
    assert np.max(np.abs(np.diff(c.g2))) < 0.05 * np.ptp(c.g2) + 1e-12


def test_g2_needs_photons(p):
    m = EffectiveModel(omega=p.omega, omega0=p.omega0, lam=0.0, kappa=p.kappa, gamma=1.0)
    with pytest.raises(DomainError):
        g2(0.0, m)


# -- photon number and density fluctuations ------------------------------------


def test_photon_number_gamma0_matches_lyapunov_oracle(p, frozen):
    ref = frozen["open_photon_gamma0"]
    for x, v in zip(ref["x"], ref["value"]):
        assert oracles.open_photon_number(x) == pytest.approx(v, rel=1e-10)
        m = model(p, x, 0.0, T=0.0, determinant_mode="exact")
        assert incoherent_photon_number(m) == pytest.approx(v, rel=1e-7)


def test_photon_number_with_bath_matches_quadrature_oracle(p, frozen):
    for row in frozen["open_gamma300"]:
        m = model(p, row["x"], row["gamma"] / TWO_PI, T=100e-9, determinant_mode="exact")
        assert m.n_th == pytest.approx(row["n_th"], rel=1e-6)
        # the default window stops short of the cavity poles at +-omega
        assert incoherent_photon_number(m) == pytest.approx(row["half_axis_photon"], rel=1e-3)


def test_atomic_variance_matches_lyapunov_oracle(p, frozen):
    for row in frozen["open_gamma300"]:
        m = model(p, row["x"], row["gamma"] / TWO_PI, T=100e-9, determinant_mode="exact")
        # the Lorentzian bath tail beyond the finite window costs a few 1e-4
        assert atomic_quadrature_variance(m) == pytest.approx(row["markov_quadrature"], rel=1e-3)
    ref = frozen["open_quadrature_gamma0"]
    for x, v in zip(ref["x"], ref["value"]):
        m = model(p, x, 0.0, T=0.0, determinant_mode="exact")
        assert atomic_quadrature_variance(m) == pytest.approx(v, rel=1e-6)


def test_photon_number_exponent(p):
    xs = 1 - np.logspace(-1, -2, 8)
    n = [incoherent_photon_number(model(p, x, 0.0, T=0.0, determinant_mode="exact")) for x in xs]
    assert fit_power_law(xs, n, (0.9, 0.99)).exponent == pytest.approx(1.0, abs=0.05)


def test_photon_number_independent_of_detection(p):
    m = model(p, 0.9, 250.0)
    q = p.replace(eta=p.eta / 2)
    assert incoherent_photon_number(model(q, 0.9, 250.0)) == incoherent_photon_number(m)
    assert incoherent_photon_number(model(p, 0.0, 250.0)) == 0.0


def test_adiabatic_elimination(p):
    for x in (0.5, 0.9):
        m = model(p, x, 0.0, T=0.0, determinant_mode="exact")
        lhs = incoherent_photon_number(m)
        rhs = m.lam**2 / (p.kappa**2 + p.omega**2) * atomic_quadrature_variance(m)
        assert lhs == pytest.approx(rhs, rel=0.02)


def test_density_variance(p):
    m = model(p, 0.95, 0.0, T=0.0, determinant_mode="exact")
    v = density_fluctuation_variance(m, p)
    assert v == pytest.approx(4 * p.omega / (p.omega0 * 0.95) * incoherent_photon_number(m), rel=1e-12)
    # weak coupling with a zero-temperature atomic bath: vacuum variance
    small = model(p, 1e-4, 50.0, T=0.0)
    assert density_fluctuation_variance(small) == pytest.approx(1.0, rel=1e-2)
    with pytest.raises(DomainError):
        density_fluctuation_variance(m, x=0.0)


def test_open_exceeds_closed_increasingly(p):
    ratios = []
    for x in (0.5, 0.9, 0.99):
        m = model(p, x, 0.0, T=0.0, determinant_mode="exact")
        ratios.append(density_fluctuation_variance(m) / ground_state_fluctuations(p, x).quadrature_variance)
    assert ratios[0] > 1 and np.all(np.diff(ratios) > 0)


def test_pair_creation_needs_coupling(p):
    q = p.replace(kappa=1e-6)
    for x, positive in ((0.0, False), (0.5, True)):
        m = EffectiveModel.from_params(q, x, TWO_PI * 250.0, T=0.0, n_B=0.0, determinant_mode="exact")
        assert (incoherent_photon_number(m) > 0) is positive


def test_model_validation(p):
    with pytest.raises(DomainError):
        model(p, 0.5, -1.0)
    with pytest.raises(DomainError):
        model(p, -0.1)
    with pytest.raises(DomainError):
        EffectiveModel(omega=1.0, omega0=1.0, lam=0.1, kappa=1.0, gamma=1.0, pairing="other")


def test_dominant_frequency_skips_decay():
    t = np.linspace(0, 2e-3, 2001)
    y = np.exp(-t / 3e-4) + 0.2 * np.cos(TWO_PI * 5e3 * t)
    assert dominant_frequency(t, y) == pytest.approx(TWO_PI * 5e3, rel=0.01)
