from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dicke_lab.analysis import bin_counts, g2_estimator
from dicke_lab.errors import DataError, DomainError, UnrealizableCovarianceError
from dicke_lab.params import TWO_PI, PhysicalParams
from dicke_lab.spectral import EffectiveModel, correlators_fft, incoherent_photon_number
from dicke_lab.synth import (THRESHOLD_RATE, ClickTrace, CuspGammaProfile, SweepSchedule, clicks_from_field,
                             clicks_from_intensity, field_block, read_trace, synthesize_stationary,
                             synthesize_sweep, write_trace)


def model(p, x, gamma_hz=300.0, **kw):
    return EffectiveModel.from_params(p, x, TWO_PI * gamma_hz, n_B=0.0, **kw)


def block_stats(v, nblocks=200):
    v = v[: len(v) // nblocks * nblocks].reshape(nblocks, -1).mean(axis=1)
    return v.mean(), v.std(ddof=1) / math.sqrt(nblocks)


# -- trace files ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 2**40), max_size=200, unique=True), st.sampled_from(["csv", "bin"]))
def test_trace_roundtrip(tmp_path_factory, stamps, fmt):
    ts = np.array(sorted(stamps), dtype=np.uint64)
    tr = ClickTrace(ts, (int(ts[-1]) + 5) * 1e-9 if len(ts) else 1e-3, {"zeta": 60.0}, {"gamma": 1.0})
    path = tmp_path_factory.mktemp("tr") / f"t.{fmt}"
    write_trace(tr, path, fmt=fmt)
    back = read_trace(path)
    assert back.timestamps.dtype == np.uint64
    np.testing.assert_array_equal(back.timestamps, tr.timestamps)
    assert back.duration_ns == tr.duration_ns and back.schedule == tr.schedule
    write_trace(back, path.with_name("again." + fmt), fmt=fmt)
    assert path.read_bytes() == path.with_name("again." + fmt).read_bytes()


def test_binary_layout(tmp_path):
    tr = ClickTrace(np.array([3, 9], dtype=np.uint64), 1e-6)
    path = tmp_path / "t.bin"
    write_trace(tr, path, sidecar=False)
    raw = path.read_bytes()
    assert raw[:4] == b"CLK1" and int.from_bytes(raw[4:12], "little") == 2
    assert int.from_bytes(raw[12:20], "little") == 3 and len(raw) == 28


def test_bad_traces(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"CLK1" + (5).to_bytes(8, "little") + b"\0" * 8)
    with pytest.raises(DataError):
        read_trace(bad)
    unsorted = tmp_path / "u.csv"
    unsorted.write_text("# duration_ns=100\n5\n3\n")
    with pytest.raises(DataError):
        read_trace(unsorted)
    with pytest.raises(DataError):
        read_trace(tmp_path / "missing.csv")


# -- Gaussian field ---------------------------------------------------------------


def test_field_block_uncoupled_and_deterministic(p):
    assert not np.any(field_block(model(p, 0.0), 1e-3, 1e-6, 1))
    m = model(p, 0.8)
    a = field_block(m, 4e-3, 1e-6, 7, project=True)
    np.testing.assert_array_equal(a, field_block(m, 4e-3, 1e-6, 7, project=True))
    assert not np.array_equal(a, field_block(m, 4e-3, 1e-6, 8, project=True))


def test_field_block_flags_unrealizable_pairing(p):
    # the quantum pair correlations exceed the classical Gaussian bound here
    with pytest.raises(UnrealizableCovarianceError) as exc:
        field_block(model(p, 0.8), 4e-3, 1e-6, 1)
    assert exc.value.violation > 1e-12


def test_field_block_photon_number(p):
    m = model(p, 0.8)
    a = field_block(m, 4.0, 1e-6, 3, project=True)
    mean, se = block_stats(np.abs(a) ** 2)
    assert abs(mean - incoherent_photon_number(m)) < 3 * se


@pytest.mark.parametrize("x,gamma_hz", [(0.6, 300.0), (0.8, 600.0), (0.93, 1000.0)])
def test_field_block_autocovariance(p, x, gamma_hz):
    m = model(p, x, gamma_hz)
    dt = 1e-6
    a = field_block(m, 2.0, dt, 11, project=True)
    ws = m.omega_s
    lags = [0, int(round(1 / ws / dt)), int(round(5 / ws / dt))]
    G, _ = correlators_fft(m, dt, lags[-1] + 1)
    for k in lags:
        prod = np.conj(a[: len(a) - k]) * a[k:]
        mean, se = block_stats(prod.real)
        assert abs(mean - G[k].real) < 3 * se + 1e-12


# -- clicks ---------------------------------------------------------------------


def test_background_only(p):
    tr = clicks_from_field(np.zeros(2_000_000), 0j, p, 5, 1e-6)
    expected = p.r_b * 2.0
    assert abs(len(tr) - expected) < 3 * math.sqrt(expected)
    tr.validate()


def test_coherent_rate_and_fano(p):
    dt = 1e-7  # keeps rate*dt below 0.1 at 7.9e5 counts/s
    tr = clicks_from_field(np.zeros(2_000_000), 1.0 + 0j, p, 6, dt)
    rate = len(tr) / tr.duration
    expected = 2 * p.kappa * p.eta + p.r_b
    assert expected == pytest.approx(785_739.8, rel=1e-5)
    assert abs(rate - expected) < 3 * math.sqrt(expected / tr.duration)
    c = bin_counts(tr, 2e-6).counts.astype(float)
    fano = c.var(ddof=1) / c.mean()
    assert abs(fano - 1) < 3 * math.sqrt(2.0 / len(c))


def test_rate_guard(p):
    with pytest.raises(DomainError):
        clicks_from_intensity(np.array([1e6]), 1e-6, p, np.random.default_rng(0))


def test_thermal_bunching_from_clicks():
    p = PhysicalParams(eta=0.5, r_b=0.0)
    m = model(p, 0.9, 300.0)
    a = field_block(m, 1.0, 1e-7, 4, project=True)
    tr = clicks_from_field(a, 0j, p, 9, 1e-7)
    est = g2_estimator(tr, 0.0, tr.duration, max_lag=10e-6)
    assert 2 - 3 * est.err[0] <= est.g2[0] <= 3 + 3 * est.err[0]


def test_stationary_deterministic(p):
    m = model(p, 0.8, zeta=60.0)
    a = synthesize_stationary(m, p, 0.05, seed=3)
    b = synthesize_stationary(m, p, 0.05, seed=3)
    np.testing.assert_array_equal(a.timestamps, b.timestamps)
    assert not np.array_equal(a.timestamps, synthesize_stationary(m, p, 0.05, seed=4).timestamps)
    a.validate()


# -- sweeps ---------------------------------------------------------------------


def short_schedule(**kw):
    base = dict(x_start=0.9, x_end=1.05, duration=0.08, seed=5)
    base.update(kw)
    return SweepSchedule(**base)


def test_sweep_deterministic_and_tail(p):
    s = short_schedule()
    a, b = synthesize_sweep(s, p), synthesize_sweep(s, p)
    np.testing.assert_array_equal(a.timestamps, b.timestamps)
    a.validate()
    rates = bin_counts(a, 100e-6).rates
    assert rates.max() > THRESHOLD_RATE
    assert a.truth["t_critical"] == pytest.approx(s.t_critical)
    other = synthesize_sweep(short_schedule(run=1), p)
    assert not np.array_equal(a.timestamps, other.timestamps)


def test_sweep_rate_increases(p):
    s = SweepSchedule(x_start=0.55, x_end=0.9, duration=0.4, zeta=0.0, seed=2)
    tr = synthesize_sweep(s, p)
    c = bin_counts(tr, 40e-3).counts.astype(float)
    # Cox counts are overdispersed; allow 3 sigma with a generous Poisson floor
    tol = 3 * np.sqrt(2 * (c[1:] + c[:-1]))
    assert np.all(np.diff(c) > -tol)
    assert c[-1] > c[0]


def test_schedule_rules():
    s = SweepSchedule()
    assert s.x_at(0.0) == pytest.approx(0.55)
    assert s.x_at(s.t_critical) == pytest.approx(1.0)
    lossy = SweepSchedule(atom_loss=0.1, x_end=1.2)
    assert lossy.x_at(lossy.t_critical) == pytest.approx(1.0)
    assert lossy.t_critical > SweepSchedule(x_end=1.2).t_critical
    # never reaching threshold: the sweep end
    assert SweepSchedule(atom_loss=0.1).t_critical == 0.8
    for bad in (dict(block_length=0.5e-3), dict(x_start=1.0, x_end=0.9), dict(atom_loss=1.0),
                dict(block_length=4.0005e-3)):
        with pytest.raises(DomainError):
            SweepSchedule(**bad)
    assert SweepSchedule(seed=1).run_phi() == SweepSchedule(seed=1).run_phi()


def test_cusp_profile():
    g = CuspGammaProfile()
    assert g(0.95) / TWO_PI == pytest.approx(1000.0, rel=1e-12)
    assert g(1.0) == 0.0
    xs = np.linspace(0.5, 0.999, 200)
    v = g(xs)
    assert np.argmax(v) == np.argmin(np.abs(xs - 0.95))
    assert g(0.5768) / TWO_PI == pytest.approx(264, abs=1)
