"""Synthetic photon click streams with the model correlation structure.

Two generators are provided.

``field_block`` draws a stationary complex Gaussian field whose normally
ordered covariance and pseudo-covariance equal the model spectra. This is
only possible when the per-frequency 2x2 covariance is positive
semidefinite, which the driven-dissipative model violates for most physical
parameters (its pair correlations are non-classical). The function refuses
such models unless ``project=True``.

Sweeps therefore use a Cox process: the intracavity photon number is
n(t) = (|alpha| + Y(t))^2 with Y a real stationary Gaussian process of
covariance Re G1(tau). This reproduces <n> and g2(0) exactly and g2(tau)
to within a few 1e-2 at the default parameters. Clicks are Poisson given
n(t), with the detector background added to the rate.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .errors import DataError, DomainError, UnrealizableCovarianceError
from .meanfield import PHI_GRID_POINTS, phi_grid, steady_state
from .params import TWO_PI, PhysicalParams
from .spectral import (EffectiveModel, correlators_fft, frequency_window, g2_from_parts,
                       spectral_densities)

THRESHOLD_RATE = 18e6  # counts/s used to flag the transition
MAGIC = b"CLK1"


# -- click traces ---------------------------------------------------------------


@dataclass
class ClickTrace:
    timestamps: np.ndarray  # uint64 ns
    duration: float  # s
    schedule: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.uint64)

    @property
    def duration_ns(self) -> int:
        return int(round(self.duration * 1e9))

    @property
    def times(self) -> np.ndarray:
        return self.timestamps.astype(np.float64) * 1e-9

    def __len__(self):
        return len(self.timestamps)

    def validate(self):
        t = self.timestamps
        if len(t) and (np.any(np.diff(t.astype(np.int64)) <= 0) or int(t[-1]) >= self.duration_ns):
            raise DataError("timestamps must be strictly increasing and below the duration")

    def slice(self, t0: float, t1: float) -> "ClickTrace":
        """Clicks in [t0, t1), re-referenced to t0."""
        a, b = int(round(t0 * 1e9)), int(round(t1 * 1e9))
        lo, hi = np.searchsorted(self.timestamps, [a, b])
        return ClickTrace(self.timestamps[lo:hi] - np.uint64(a), (b - a) * 1e-9,
                          dict(self.schedule, offset=t0), self.truth)


def _atomic_write_bytes(path: Path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(trace: ClickTrace, path, fmt: str | None = None, sidecar: bool = True):
    """Write a trace as CSV (one ns timestamp per line) or binary CLK1."""
    path = Path(path)
    fmt = fmt or ("bin" if path.suffix in (".bin", ".clk") else "csv")
    if fmt == "csv":
        body = "\n".join(map(str, trace.timestamps.tolist()))
        text = f"# duration_ns={trace.duration_ns}\n" + body + ("\n" if body else "")
        _atomic_write_bytes(path, text.encode())
    elif fmt == "bin":
        data = MAGIC + struct.pack("<Q", len(trace)) + trace.timestamps.astype("<u8").tobytes()
        _atomic_write_bytes(path, data)
    else:
        raise DomainError(f"unknown trace format {fmt!r}")
    if sidecar:
        meta = {"duration_ns": trace.duration_ns, "schedule": trace.schedule, "truth": trace.truth}
        _atomic_write_bytes(path.with_name(path.name + ".json"),
                            json.dumps(meta, indent=1, sort_keys=True, default=float).encode())


def read_trace(path) -> ClickTrace:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from exc
    meta_path = path.with_name(path.name + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    duration_ns = meta.get("duration_ns")
    if raw[:4] == MAGIC:
        if len(raw) < 12:
            raise DataError("truncated CLK1 header")
        (n,) = struct.unpack("<Q", raw[4:12])
        if len(raw) != 12 + 8 * n:
            raise DataError("CLK1 payload length does not match count")
        ts = np.frombuffer(raw, dtype="<u8", offset=12, count=n).astype(np.uint64)
    else:
        lines = raw.decode().splitlines()
        vals = []
        for ln in lines:
            ln = ln.strip()
            if not ln:
                continue
            if ln.startswith("#"):
                if ln[1:].strip().startswith("duration_ns="):
                    duration_ns = int(ln.split("=", 1)[1])
                continue
            vals.append(int(ln))
        ts = np.array(vals, dtype=np.uint64)
    if duration_ns is None:
        duration_ns = int(ts[-1]) + 1 if len(ts) else 0
    tr = ClickTrace(ts, duration_ns * 1e-9, meta.get("schedule", {}), meta.get("truth", {}))
    tr.validate()
    return tr


# -- sweep schedule -------------------------------------------------------------


@dataclass(frozen=True)
class CuspGammaProfile:
    """gamma(x) = A (1-x)^c exp(k x): peaks at x_peak, vanishes at x=1."""

    peak: float = TWO_PI * 1000.0
    x_peak: float = 0.95
    power: float = 0.25

    @property
    def k(self) -> float:
        return self.power / (1.0 - self.x_peak)

    @property
    def amplitude(self) -> float:
        return self.peak / ((1 - self.x_peak) ** self.power * math.exp(self.k * self.x_peak))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.amplitude * np.clip(1.0 - x, 0.0, None) ** self.power * np.exp(self.k * x)
        return float(out) if out.ndim == 0 else out

    def coefficients(self) -> tuple[float, ...]:
        """Same curve in the six-coefficient empirical form (second term off)."""
        return (self.amplitude, self.power, self.k, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class ConstantGamma:
    value: float

    def __call__(self, x):
        return self.value if np.ndim(x) == 0 else np.full(np.shape(x), self.value)


@dataclass(frozen=True)
class SweepSchedule:
    x_start: float = 0.55
    x_end: float = 1.05
    duration: float = 0.8
    block_length: float = 4e-3
    zeta: float = 60.0
    phi: float | None = None  # None: drawn from the phase grid using the seed
    gamma_profile: Callable = CuspGammaProfile()
    seed: int = 0
    run: int = 0
    dt: float = 1e-6
    tail_delay: float = 1e-3
    tail_rise: float = 0.1e-3
    tail_cap: float = 2.0
    tail_hold: float = 1e-3
    n_phi: int = PHI_GRID_POINTS
    atom_loss: float = 0.0  # fraction of atoms lost linearly over the sweep

    def __post_init__(self):
        if not self.x_end > self.x_start >= 0:
            raise DomainError("need 0 <= x_start < x_end")
        if self.block_length < 1e-3:
            raise DomainError("block_length must be >= 1 ms")
        if self.duration <= 0 or self.dt <= 0:
            raise DomainError("duration and dt must be > 0")
        nb = self.block_length / self.dt
        if abs(nb - round(nb)) > 1e-6:
            raise DomainError("block_length must be a multiple of dt")
        if not 0 <= self.atom_loss < 1:
            raise DomainError("atom_loss must lie in [0, 1)")

    def x_at(self, t):
        # P_cr scales as 1/N, so losing atoms lowers x at fixed pump power
        t = np.asarray(t, dtype=float)
        lin = self.x_start + (self.x_end - self.x_start) * t / self.duration
        return lin * (1.0 - self.atom_loss * t / self.duration)

    @property
    def t_critical(self) -> float:
        """First time with x = 1; the sweep end if the threshold is never reached."""
        a, s = self.x_start, (self.x_end - self.x_start) / self.duration
        c = self.atom_loss / self.duration
        if c == 0:
            t = (1.0 - a) / s
        else:
            disc = (s - a * c) ** 2 + 4 * s * c * (a - 1.0)
            t = (s - a * c - math.sqrt(disc)) / (2 * s * c) if disc >= 0 else math.inf
        return t if 0 <= t <= self.duration else self.duration

    def run_phi(self) -> float:
        if self.phi is not None:
            return float(self.phi)
        rng = np.random.default_rng([self.seed, self.run, 0x5EED])
        return float(phi_grid(self.n_phi)[rng.integers(self.n_phi)])

    def metadata(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "gamma_profile"}
        d["gamma_profile"] = repr(self.gamma_profile)
        d["phi"] = self.run_phi()
        d["t_critical"] = self.t_critical
        return d


# -- Gaussian field synthesis -----------------------------------------------------


def field_block(m: EffectiveModel, duration: float, dt: float, seed, project: bool = False,
                report: dict | None = None) -> np.ndarray:
    """Stationary complex Gaussian fluctuation field da(t_i), t_i = i*dt.

    Frequency-grid synthesis: each pair (nu, -nu) receives a 2x2 complex
    Gaussian with covariance built from S(nu) and the (symmetrized) pair
    spectrum Q(nu). Unrealizable pairs raise unless ``project`` caps |Q|.
    """
    n = int(round(duration / dt))
    if n < 2:
        raise DomainError("need at least two samples")
    if m.lam == 0:
        return np.zeros(n, dtype=complex)
    nu = TWO_PI * sfft.fftfreq(n, dt)
    dnu = TWO_PI / (n * dt)
    S, Q = spectral_densities(nu, m)
    W = frequency_window(m)
    S[np.abs(nu) > W] = 0.0
    Q[np.abs(nu) > W] = 0.0
    neg = (-np.arange(n)) % n
    Q = 0.5 * (Q + Q[neg])
    S = np.clip(S, 0.0, None) * dnu
    Q = Q * dnu
    cap = np.sqrt(S * S[neg])
    excess = np.clip(np.abs(Q) - cap, 0.0, None)
    violation = float(excess.max() / max(S.sum(), 1e-300))
    if report is not None:
        report["violation"] = violation
        report["projected_fraction"] = float(excess.sum() / max(np.abs(Q).sum(), 1e-300))
    if violation > 1e-12:
        if not project:
            raise UnrealizableCovarianceError(
                "pair spectrum exceeds the classical bound |Q|^2 <= S(nu) S(-nu)", violation)
        Q = np.where(np.abs(Q) > cap, Q * cap / np.maximum(np.abs(Q), 1e-300), Q)

    rng = np.random.default_rng(seed)
    e1 = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
    e2 = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
    z = np.zeros(n, dtype=complex)
    k = np.arange(1, (n + 1) // 2)  # strictly positive bins with a distinct partner
    kn = neg[k]
    # u = (z_k, conj z_-k): <u u^H> = [[S_k, Q_k], [Q_k*, S_-k]]
    s1, s2, q = S[k], S[kn], Q[k]
    l11 = np.sqrt(s1)
    l21 = np.where(l11 > 0, np.conj(q) / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.clip(s2 - np.abs(l21) ** 2, 0.0, None))
    z[k] = l11 * e1[k]
    z[kn] = np.conj(l21 * e1[k] + l22 * e2[k])
    self_paired = [0] + ([n // 2] if n % 2 == 0 else [])
    for j in self_paired:
        # improper scalar: <|z|^2> = S, <z^2> = Q, with |Q| <= S after projection
        s, qq = S[j], Q[j]
        if abs(qq) > s:
            qq = qq * s / abs(qq)
        ph = np.exp(0.5j * np.angle(qq)) if qq != 0 else 1.0
        vr, vi = 0.5 * (s + abs(qq)), 0.5 * (s - abs(qq))
        z[j] = ph * (math.sqrt(vr) * rng.standard_normal() + 1j * math.sqrt(max(vi, 0)) * rng.standard_normal())
    # a(t) = sum_k z_k exp(i nu_k t)
    return sfft.ifft(z) * n


def _positions(counts: np.ndarray, t0_ns: float, dt_ns: float, rng) -> np.ndarray:
    idx = np.repeat(np.arange(len(counts)), counts)
    t = t0_ns + (idx + rng.random(len(idx))) * dt_ns
    return np.floor(t).astype(np.int64)


def _dedupe(ts: np.ndarray) -> np.ndarray:
    """Sort and shift collisions by +1 ns until strictly increasing."""
    ts = np.sort(ts)
    if len(ts) > 1:
        ts = ts - np.arange(len(ts))
        ts = np.maximum.accumulate(ts) + np.arange(len(ts))
    return ts


def clicks_from_intensity(n_photons: np.ndarray, dt: float, p: PhysicalParams, rng,
                          t0: float = 0.0, substeps: int = 1, check: bool = True) -> np.ndarray:
    """Poisson clicks for a piecewise-constant photon number; returns int64 ns."""
    rate = p.detection_scale * np.asarray(n_photons, dtype=float) + p.r_b
    step = dt / substeps
    if check and rate.size and rate.max() * step >= 0.1:
        raise DomainError(
            f"rate*dt = {rate.max() * step:.3g} >= 0.1; use a smaller dt or more substeps")
    counts = rng.poisson(rate * dt)
    return _positions(counts, t0 * 1e9, dt * 1e9, rng)


def clicks_from_field(field_samples, alpha: complex, p: PhysicalParams, seed, dt: float,
                      substeps: int = 1) -> ClickTrace:
    """Thin an inhomogeneous Poisson process with rate 2 kappa eta |alpha + da|^2 + r_b."""
    field_samples = np.asarray(field_samples, dtype=complex)
    rng = np.random.default_rng(seed)
    n = np.abs(alpha + field_samples) ** 2
    ts = _dedupe(clicks_from_intensity(n, dt, p, rng, substeps=substeps))
    duration = len(field_samples) * dt
    ts = ts[ts < int(round(duration * 1e9))]
    return ClickTrace(ts.astype(np.uint64), duration, {"kind": "field"}, {})


# -- intensity-matched Cox process ------------------------------------------------


@dataclass
class CoxKernel:
    mu: float  # offset amplitude, n = (mu + Y)^2
    amp: np.ndarray  # sqrt of the circulant spectrum of Y (rfft layout)
    clipped: float  # fraction of spectral weight removed by clipping
    n_mean: float
    g2_residual: float = 0.0  # max |g2_cox - g2_model| over the window (no background)


def cox_kernel(G1d: np.ndarray, Pd: np.ndarray, alpha: complex, pair0: complex,
               length: int) -> CoxKernel:
    """Circulant Cox kernel from fluctuation correlators sampled at j*dt, j <= length/2.

    Y has covariance Re G1(tau) and n = (|alpha| + Y)^2. The spectrum of
    Re G1 is the symmetrized incoherent spectrum, so the kernel is always
    realizable, and <n> and g2(0) equal the model values. At nonzero delay
    the terms in (Im G1)^2 and the pair correlator are only approximated;
    the largest deviation is returned in ``g2_residual``.
    """
    half = length // 2
    if len(G1d) < half + 1:
        raise DomainError("correlators do not cover half the window")
    n_inc = float(G1d[0].real)
    a2 = abs(alpha) ** 2
    n0 = n_inc + a2
    if n0 <= 0:
        return CoxKernel(0.0, np.zeros(half + 1), 0.0, 0.0)
    K = np.real(G1d[:half + 1])
    full = np.concatenate([K, K[1:length - half][::-1]])
    spec = sfft.rfft(full).real
    negw = -spec[spec < 0].sum()
    clipped = float(negw / max(np.abs(spec).sum(), 1e-300))
    amp = np.sqrt(np.clip(spec, 0.0, None))
    g_model = np.real(g2_from_parts(G1d[:half + 1], Pd[:half + 1], n_inc, alpha, pair0, 0.0))
    g_cox = 1.0 + (4.0 * a2 * K + 2.0 * K * K) / n0**2
    resid = float(np.max(np.abs(g_cox - g_model)))
    return CoxKernel(math.sqrt(a2), amp, clipped, n0, resid)


class _NoiseChunks:
    """White noise in fixed chunks, each from its own counter-derived seed."""

    def __init__(self, seed: int, run: int, size: int, cache: int = 8):
        self.seed, self.run, self.size = seed, run, size
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._max = cache

    def get(self, j: int) -> np.ndarray:
        if j in self._cache:
            return self._cache[j]
        rng = np.random.default_rng([self.seed, self.run, 1, j + 1_000_000])
        arr = rng.standard_normal(self.size)
        self._cache[j] = arr
        if len(self._cache) > self._max:
            self._cache.popitem(last=False)
        return arr


def cox_block(noise: _NoiseChunks, b: int, kernel: CoxKernel, halo: int) -> np.ndarray:
    """Photon number in block b: filter chunks b-halo..b+halo and keep the middle."""
    nb = noise.size
    w = np.concatenate([noise.get(j) for j in range(b - halo, b + halo + 1)])
    y = sfft.irfft(sfft.rfft(w) * kernel.amp, n=len(w))[halo * nb:(halo + 1) * nb]
    return (kernel.mu + y) ** 2


WINDOW_HALO = 2  # chunks on either side of a block: 5-block filtering window


def _block_correlators(m: EffectiveModel, dt: float, length: int):
    return correlators_fft(m, dt, length // 2 + 1, min_period=length * dt)


def synthesize_stationary(m: EffectiveModel, p: PhysicalParams, duration: float, seed: int,
                          dt: float = 1e-6, block_length: float = 4e-3) -> ClickTrace:
    """Clicks from a stationary Cox process matched to the model g2 (background from p)."""
    nb = int(round(block_length / dt))
    L = (2 * WINDOW_HALO + 1) * nb
    G, P = _block_correlators(m, dt, L)
    ker = cox_kernel(G, P, m.alpha, m.coherent_pair, L)
    noise = _NoiseChunks(seed, 0, nb)
    rng = np.random.default_rng([seed, 0, 2])
    nblocks = int(math.ceil(duration / block_length))
    parts = []
    for b in range(nblocks):
        n = cox_block(noise, b, ker, WINDOW_HALO)
        parts.append(clicks_from_intensity(n, dt, p, rng, t0=b * block_length, check=False))
    ts = _dedupe(np.concatenate(parts))
    ts = ts[ts < int(round(duration * 1e9))]
    return ClickTrace(ts.astype(np.uint64), duration, {"kind": "stationary", "x": m.x},
                      {"gamma": m.gamma, "clipped": ker.clipped, "n_mean": ker.n_mean,
                       "g2_residual": ker.g2_residual})


class SweepModelCache:
    """Per-block fluctuation correlators, shared by all runs of a sweep."""

    def __init__(self, p: PhysicalParams, s: SweepSchedule):
        self.p, self.s = p, s
        self.nb = int(round(s.block_length / s.dt))
        self.L = (2 * WINDOW_HALO + 1) * self.nb
        self._corr: dict[int, tuple] = {}
        self._kern: dict[tuple, CoxKernel] = {}
        self._alpha: dict[tuple, complex] = {}

    def block_x(self, b: int) -> float:
        s = self.s
        t_mid = (b + 0.5) * s.block_length
        return float(s.x_at(min(t_mid, s.t_critical)))

    def model(self, b: int, alpha: complex = 0j) -> EffectiveModel:
        x = min(self.block_x(b), 1.0 - 1e-6)
        m = EffectiveModel.from_params(self.p, x, float(self.s.gamma_profile(x)), n_B=0.0)
        return m.replace(alpha=alpha)

    def alpha(self, b: int, zeta_eff: float) -> complex:
        key = (b, round(zeta_eff, 12))
        if key not in self._alpha:
            x = min(self.block_x(b), 1.0 - 1e-6)
            self._alpha[key] = steady_state(self.p, self.p.coupling(x), zeta_eff).alpha if zeta_eff else 0j
        return self._alpha[key]

    def kernel(self, b: int, zeta_eff: float) -> CoxKernel:
        # the kernel depends on alpha only through |alpha|, hence on |zeta_eff|
        zeta_eff = abs(zeta_eff)
        key = (b, round(zeta_eff, 12))
        if key not in self._kern:
            if b not in self._corr:
                m0 = self.model(b)
                self._corr[b] = _block_correlators(m0, self.s.dt, self.L)
            G, P = self._corr[b]
            m = self.model(b, self.alpha(b, zeta_eff))
            self._kern[key] = cox_kernel(G, P, m.alpha, m.coherent_pair, self.L)
        return self._kern[key]


def _tail_photons(p: PhysicalParams, s: SweepSchedule, zeta_eff: float, t: np.ndarray) -> np.ndarray:
    """Ordered-phase photon number: mean field plus a fast phenomenological rise."""
    x = s.x_at(t)
    lam = p.lambda_cr * np.sqrt(x)
    nmf = np.array([abs(steady_state(p, float(l), zeta_eff).alpha) ** 2 for l in lam[::200]])
    nmf = np.interp(t, t[::200], nmf)
    n_thr = (THRESHOLD_RATE - p.r_b) / p.detection_scale
    rise = n_thr * np.exp((t - s.t_critical - s.tail_delay) / s.tail_rise)
    return np.minimum(nmf + rise, s.tail_cap * n_thr)


def synthesize_sweep(s: SweepSchedule, p: PhysicalParams,
                     cache: SweepModelCache | None = None) -> ClickTrace:
    """One experimental run: quasi-static Cox blocks below threshold, then the tail."""
    cache = cache or SweepModelCache(p, s)
    phi = s.run_phi()
    zeta_eff = s.zeta * math.cos(phi)
    noise = _NoiseChunks(s.seed, s.run, cache.nb)
    rng = np.random.default_rng([s.seed, s.run, 2])
    t_cr = s.t_critical
    n_tail_end = t_cr + s.tail_delay + s.tail_rise * math.log(s.tail_cap) + s.tail_hold
    t_end = min(s.duration, n_tail_end)
    parts = []
    clipped = resid = 0.0
    nblocks = int(math.ceil(min(t_cr, t_end) / s.block_length))
    for b in range(nblocks):
        ker = cache.kernel(b, zeta_eff)
        clipped = max(clipped, ker.clipped)
        resid = max(resid, ker.g2_residual)
        n = cox_block(noise, b, ker, WINDOW_HALO)
        t0 = b * s.block_length
        keep = min(len(n), int(round((min(t_cr, t_end) - t0) / s.dt)))
        # Poisson counts per step are exact for a piecewise-constant rate
        parts.append(clicks_from_intensity(n[:keep], s.dt, p, rng, t0=t0, check=False))
    if t_end > t_cr:
        t = np.arange(t_cr, t_end, s.dt)
        parts.append(clicks_from_intensity(_tail_photons(p, s, zeta_eff, t), s.dt, p, rng,
                                           t0=t_cr, check=False))
    ts = _dedupe(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
    ts = ts[ts < int(round(t_end * 1e9))]
    truth = {"zeta": s.zeta, "phi": phi, "t_critical": t_cr, "max_clipped": clipped,
             "max_g2_residual": resid}
    return ClickTrace(ts.astype(np.uint64), t_end, s.metadata(), truth)
