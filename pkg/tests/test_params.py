from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dicke_lab.errors import ConfigError, DomainError
from dicke_lab.params import (HBAR, K_B, TWO_PI, PhysicalParams, kappa_eff, lambda_cr_closed,
                              lambda_cr_open, load_params, read_config, soft_mode_frequency,
                              thermal_occupation)


def test_lambda_cr_closed_value(p):
    assert lambda_cr_closed(p) / TWO_PI == pytest.approx(1.4405e5, rel=1e-4)


def test_lambda_cr_closed_scaling(p):
    assert lambda_cr_closed(p.replace(omega=4 * p.omega)) == pytest.approx(2 * lambda_cr_closed(p))


def test_lambda_cr_closed_vanishes_with_splitting():
    # omega0 must stay positive in PhysicalParams, so check the limit
    p = PhysicalParams(omega0=1e-30)
    assert lambda_cr_closed(p) < 1e-6


def test_lambda_cr_open_value(p):
    assert lambda_cr_open(p) / TWO_PI == pytest.approx(1.4517e5, rel=1e-4)
    assert lambda_cr_open(p) / lambda_cr_closed(p) == pytest.approx(math.sqrt(1 + (p.kappa / p.omega) ** 2))


def test_lambda_cr_open_limits(p):
    assert lambda_cr_open(p.replace(kappa=1e-9)) == pytest.approx(lambda_cr_closed(p), rel=1e-12)
    q = p.replace(kappa=p.omega)
    assert lambda_cr_open(q) == pytest.approx(math.sqrt(2) * lambda_cr_closed(q))


def test_soft_mode(p):
    assert soft_mode_frequency(p, 0.0) == p.omega0
    assert soft_mode_frequency(p, 1.0) == 0.0
    assert soft_mode_frequency(p, 0.75) == pytest.approx(TWO_PI * 4150.0)
    with pytest.raises(DomainError):
        soft_mode_frequency(p, 1.01)
    xs = np.linspace(0, 1, 50)
    assert np.all(np.diff(soft_mode_frequency(p, xs)) < 0)


def test_kappa_eff_conventions(p):
    assert kappa_eff(p, 0.0) == 0.0
    lam = lambda_cr_open(p)
    assert kappa_eff(p, lam) / TWO_PI == pytest.approx(p.kappa * p.omega0 / (4 * p.omega) / TWO_PI)
    assert kappa_eff(p, lam) / TWO_PI == pytest.approx(259.4, abs=0.5)
    q = p.replace(coupling_convention="two_lambda")
    assert kappa_eff(q, lam) / TWO_PI == pytest.approx(1037.5, abs=2)


@given(st.floats(1e3, 1e7))
def test_kappa_eff_quadratic(lam):
    p = PhysicalParams()
    assert kappa_eff(p, 2 * lam) == pytest.approx(4 * kappa_eff(p, lam), rel=1e-12)


def test_thermal_occupation(frozen):
    assert thermal_occupation(1e4, 0.0) == 0.0
    T = 100e-9
    nu = K_B * T * math.log(2) / HBAR
    assert thermal_occupation(nu, T) == pytest.approx(1.0, rel=1e-12)
    # 8.3 kHz at 100 nK: hbar*nu/kT = 3.985, so n_th is about 0.019
    assert thermal_occupation(TWO_PI * 8.3e3, T) == pytest.approx(frozen["bose_8p3kHz_100nK"], rel=1e-6)
    with pytest.raises(DomainError):
        thermal_occupation(0.0, T)


@settings(max_examples=50)
@given(st.floats(1e-4, 1e-2))
def test_thermal_high_temperature_expansion(ratio):
    T = 100e-9
    nu = ratio * K_B * T / HBAR
    approx = 1 / ratio - 0.5
    assert abs(thermal_occupation(nu, T) - approx) / approx < 1e-3


def test_open_threshold_above_closed():
    for kappa in (1e3, 1e6, 1e8):
        p = PhysicalParams(kappa=kappa)
        assert lambda_cr_open(p) > lambda_cr_closed(p)


def test_invariants_rejected():
    with pytest.raises(DomainError):
        PhysicalParams(N=0.5)
    with pytest.raises(DomainError):
        PhysicalParams(eta=0.0)
    with pytest.raises(DomainError):
        PhysicalParams(r_b=-1.0)
    with pytest.raises(DomainError):
        PhysicalParams(coupling_convention="other")


def test_config_roundtrip(tmp_path, p):
    path = tmp_path / "cfg.toml"
    path.write_text("\n".join(f"{k} = {v!r}" if isinstance(v, str) else f"{k} = {v}"
                              for k, v in p.to_config().items()).replace("'", '"'))
    q = load_params(path)
    for name in ("N", "omega", "omega0", "kappa", "eta", "r_b", "T"):
        assert getattr(q, name) == pytest.approx(getattr(p, name), rel=1e-14)


def test_config_ini_style(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[params]\nN = 1e5\nkappa_hz: 1.0e6\n")
    q = load_params(path)
    assert q.N == 1e5 and q.kappa == pytest.approx(TWO_PI * 1e6)


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("N = 1e5\nfoo = 2\n")
    with pytest.raises(ConfigError):
        load_params(bad)
    with pytest.raises(ConfigError):
        read_config(tmp_path / "missing.toml")
    neg = tmp_path / "neg.toml"
    neg.write_text("eta = 2.0\n")
    with pytest.raises(ConfigError):
        load_params(neg)
