from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dicke_lab.errors import DomainError
from dicke_lab.meanfield import (alpha_ensemble, ensemble_zeta, hp_renormalize, phi_grid, steady_state,
                                 steady_state_closed_form, steady_state_x, sweep)


def test_normal_phase_fixed_point(p):
    s = steady_state_x(p, 0.7, 0.0)
    assert s.beta == 0 and s.alpha == 0 and s.w == -p.N / 2 and s.branch == "normal"


def test_bifurcation_branch_matches_oracle(p, frozen):
    for x, ref in zip(frozen["bifurcation_beta"]["x"], frozen["bifurcation_beta"]["value"]):
        assert ref == pytest.approx(oracles.bifurcation_beta(x), rel=1e-15)
        s = steady_state_x(p, x, 0.0)
        assert abs(s.beta - ref) <= 1e-9 * ref
        assert steady_state_closed_form(p, p.coupling(x)) == pytest.approx(ref, rel=1e-12)


def test_x2_closed_form(p):
    assert steady_state_x(p, 2.0).beta == pytest.approx(p.N / 2 * math.sqrt(3) / 2, rel=1e-12)
    assert steady_state_closed_form(p, p.coupling(4.0)) == pytest.approx(p.N / 2 * math.sqrt(15) / 4)
    assert steady_state_closed_form(p, p.coupling(1.0)) == 0.0
    assert steady_state_closed_form(p, p.coupling(0.5)) == 0.0


def test_zeta_sweep_is_continuous(p):
    xs = np.linspace(0, 1.2, 601)
    beta = np.array([s.beta for s in sweep(p, xs, 65.0)])
    assert np.all(np.diff(beta) >= 0)
    assert np.max(np.abs(np.diff(beta))) < 0.01 * p.N


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-2000.0, 2000.0))
def test_spin_norm_and_residual(x, zeta):
    from dicke_lab.params import PhysicalParams
    p = PhysicalParams()
    s = steady_state_x(p, x, zeta)
    assert abs(s.w**2 + s.beta**2 - p.N**2 / 4) <= 1e-9 * p.N**2
    assert s.w <= 0 and abs(s.beta) <= p.N / 2
    resid = s.beta - x * (s.beta + zeta) * math.sqrt(1 - 4 * s.beta**2 / p.N**2)
    assert abs(resid) < 1e-12 * p.N


def test_small_zeta_slope(p):
    for x in (0.3, 0.8, 0.95):
        s = steady_state_x(p, x, 1e-3)
        assert s.beta / 1e-3 == pytest.approx(x / (1 - x), rel=1e-4)


def test_alpha_phase(p):
    lam = p.coupling(0.8)
    s = steady_state(p, lam, 60.0)
    assert cmath.phase(s.alpha) == pytest.approx(cmath.phase(2 * lam / (1j * p.kappa - p.omega)), abs=1e-12)


def test_negative_zeta_branch(p):
    s = steady_state_x(p, 0.9, -60.0)
    assert s.branch == "minus" and s.beta < 0
    assert s.beta == pytest.approx(-steady_state_x(p, 0.9, 60.0).beta)


def test_domain_errors(p):
    with pytest.raises(DomainError):
        steady_state(p, -1.0)
    with pytest.raises(DomainError):
        steady_state(p, 1.0, p.N)


def test_hp_renormalize_identity(p):
    lam = p.coupling(0.5)
    r = hp_renormalize(p, steady_state(p, lam, 0.0), lam)
    assert (r.omega0_t, r.lambda_t, r.mu) == (p.omega0, lam, 0.0)


def test_hp_renormalize_rejects_large_beta(p):
    from dicke_lab.meanfield import SteadyState
    with pytest.raises(DomainError):
        hp_renormalize(p, SteadyState(alpha=0j, beta=p.N, w=0.0, branch="plus"), 1.0)


def test_ensemble_zeta():
    assert ensemble_zeta(60.0, 0.0) == 60.0
    assert abs(ensemble_zeta(60.0, math.pi / 2)) < 1e-12
    z = ensemble_zeta(60.0, phi_grid(32))
    assert np.mean(z**2) == pytest.approx(60.0**2 / 2, rel=1e-12)


def test_alpha_ensemble_symmetry(p):
    a = alpha_ensemble(p, 0.9, 60.0)
    assert a.shape == (32,)
    # cos(phi + pi) = -cos(phi): opposite amplitudes
    np.testing.assert_allclose(a[:16], -a[16:], rtol=1e-9, atol=1e-12 * np.abs(a).max())
