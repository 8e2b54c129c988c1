"""Linearized quantum-Langevin solution in Fourier space.

Fluctuations around the mean field obey M(nu) v(nu) + noise = 0 with
v = (da(nu), da'(-nu), db(nu), db'(-nu)). The first row of M^-1 gives the
cavity response m11..m14, from which the normally ordered field
correlator G1(tau) = <a'(t) a(t+tau)> and the pair correlator <a a> follow
as Fourier integrals of spectral densities.

Two evaluation routes are provided:

* ``quad``: adaptive quadrature per tau, split at the resonances (reference);
* ``fft``: one FFT of the sampled spectral densities, returning a uniform
  tau grid (used for fitting and synthesis).

Pair correlator ("pairing") conventions
---------------------------------------
``printed`` keeps the literal expression
(kappa/pi) C + (gamma/pi)((1+n) D + n xi B*) + xi |alpha|^2.
``consistent`` (default) builds <a a> with the same rotating-wave cut of the
atomic bath that enters G1, and uses the actual alpha^2 for the coherent
term. Only the consistent form keeps |<a a>| <= G1 and g2(0) <= 3.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft
from scipy.integrate import IntegrationWarning, quad

from .errors import DomainError, QuadratureError, SingularityError
from .meanfield import steady_state
from .params import PhysicalParams, lambda_cr_open, thermal_occupation

DETERMINANT_MODES = ("exact", "soft_mode_approx")
PAIRINGS = ("consistent", "printed")


@dataclass(frozen=True)
class EffectiveModel:
    """Parameters of the linearized fluctuation problem (angular frequencies in rad/s)."""

    omega: float
    omega0: float
    lam: float
    kappa: float
    gamma: float
    n_th: float = 0.0
    alpha: complex = 0j
    n_B: float = 0.0
    determinant_mode: str = "soft_mode_approx"
    pairing: str = "consistent"

    def __post_init__(self):
        if self.gamma < 0:
            raise DomainError("gamma must be >= 0")
        if self.n_th < 0 or self.n_B < 0:
            raise DomainError("occupations must be >= 0")
        if self.determinant_mode not in DETERMINANT_MODES:
            raise DomainError(f"determinant_mode must be one of {DETERMINANT_MODES}")
        if self.pairing not in PAIRINGS:
            raise DomainError(f"pairing must be one of {PAIRINGS}")

    @classmethod
    def from_params(cls, p: PhysicalParams, x: float, gamma: float, zeta: float = 0.0,
                    phi: float = 0.0, n_B: float | None = None, T: float | None = None,
                    **kw) -> "EffectiveModel":
        """Model at relative coupling x with coherent amplitude from the mean field.

        ``n_B`` defaults to the background rate expressed in intracavity photons,
        ``T`` to the bath temperature of ``p``.
        """
        if x < 0:
            raise DomainError("x must be >= 0")
        lam = p.coupling(x)
        T = p.T if T is None else T
        ws = p.omega0 * math.sqrt(max(1.0 - x, 0.0))
        if T == 0:
            nth = 0.0
        elif ws == 0:
            raise SingularityError("thermal occupation diverges at the critical point")
        else:
            nth = thermal_occupation(ws, T)
        z = zeta * math.cos(phi)
        alpha = steady_state(p, lam, z).alpha if (z != 0 and x < 1) else 0j
        if n_B is None:
            n_B = p.n_background
        return cls(omega=p.omega, omega0=p.omega0, lam=lam, kappa=p.kappa, gamma=gamma,
                   n_th=nth, alpha=alpha, n_B=n_B, **kw)

    def replace(self, **changes) -> "EffectiveModel":
        return replace(self, **changes)

    @property
    def lambda_cr(self) -> float:
        return math.sqrt((self.kappa**2 + self.omega**2) * self.omega0 / (4.0 * self.omega))

    @property
    def x(self) -> float:
        return (self.lam / self.lambda_cr) ** 2

    @property
    def omega_s(self) -> float:
        x = self.x
        if x > 1:
            raise DomainError("no soft mode above threshold")
        return self.omega0 * math.sqrt(1.0 - x)

    @property
    def cavity_damping(self) -> float:
        """Soft-mode damping inherited from the cavity admixture."""
        return self.x * self.kappa * self.omega0**2 / (self.kappa**2 + self.omega**2)

    @property
    def xi(self) -> complex:
        return (self.omega - 1j * self.kappa) ** 2 / (self.kappa**2 + self.omega**2)

    @property
    def coherent_pair(self) -> complex:
        """Coherent contribution to <a a>."""
        if self.pairing == "printed":
            return self.xi * abs(self.alpha) ** 2
        return complex(self.alpha) ** 2

    def check_stable(self):
        lhs = 4.0 * self.lam**2 * self.omega * self.omega0
        rhs = (self.gamma**2 + self.omega0**2) * (self.kappa**2 + self.omega**2)
        if lhs >= rhs * (1.0 - 1e-12):  # x = 1 up to rounding counts as critical
            raise SingularityError("normal phase is not stable (at or beyond the critical point)")
        if self.determinant_mode == "soft_mode_approx":
            if self.x >= 1.0 and self.gamma == 0.0:
                raise SingularityError("soft-mode determinant vanishes at x=1 without damping")
            if self.gamma == 0.0:
                raise SingularityError(
                    "soft-mode determinant has real zeros for gamma=0; use determinant_mode='exact'")


@dataclass(frozen=True)
class MatrixElements:
    m11: np.ndarray
    m12: np.ndarray
    m13: np.ndarray
    m14: np.ndarray
    D: np.ndarray


@dataclass
class CorrelationCurve:
    tau: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    photon_number: float
    coherent_fraction: float
    x: float
    meta: dict = field(default_factory=dict)


# -- matrix and elements -----------------------------------------------------


def matrix_M(nu, m: EffectiveModel) -> np.ndarray:
    """Langevin matrix M(nu); shape (..., 4, 4) for array input."""
    nu = np.asarray(nu, dtype=float)
    out = np.zeros(nu.shape + (4, 4), dtype=complex)
    il = 1j * m.lam
    out[..., 0, 0] = -1j * nu + 1j * m.omega + m.kappa
    out[..., 1, 1] = -1j * nu - 1j * m.omega + m.kappa
    out[..., 2, 2] = -1j * nu + 1j * m.omega0 + m.gamma
    out[..., 3, 3] = -1j * nu - 1j * m.omega0 + m.gamma
    out[..., 0, 2] = out[..., 0, 3] = il
    out[..., 1, 2] = out[..., 1, 3] = -il
    out[..., 2, 0] = out[..., 2, 1] = il
    out[..., 3, 0] = out[..., 3, 1] = -il
    return out


def determinant(nu, m: EffectiveModel):
    nu = np.asarray(nu, dtype=float)
    if m.determinant_mode == "soft_mode_approx":
        ws2 = m.omega0**2 * (1.0 - m.x)
        return ((m.gamma - 1j * nu) ** 2 + ws2) * (m.kappa**2 + m.omega**2)
    return (((m.gamma - 1j * nu) ** 2 + m.omega0**2) * ((m.kappa - 1j * nu) ** 2 + m.omega**2)
            - 4.0 * m.lam**2 * m.omega * m.omega0)


def _numerators(nu, m: EffectiveModel):
    lam, w0, g = m.lam, m.omega0, m.gamma
    c = 1j * m.kappa + m.omega + nu
    n12 = 2j * lam**2 * w0 + 0.0 * nu
    n11 = n12 - 1j * c * ((g - 1j * nu) ** 2 + w0**2)
    n13 = 1j * lam * c * (1j * g + nu + w0)
    n14 = 1j * lam * c * (1j * g + nu - w0)
    return n11, n12, n13, n14


def matrix_elements(nu, m: EffectiveModel, check: bool = True) -> MatrixElements:
    """Closed-form first row of M^-1 (numerators unchanged in soft-mode mode)."""
    nu = np.asarray(nu, dtype=float)
    D = determinant(nu, m)
    if check and np.any(D == 0):
        raise SingularityError("determinant vanishes on the real frequency axis")
    n11, n12, n13, n14 = _numerators(nu, m)
    return MatrixElements(n11 / D, n12 / D, n13 / D, n14 / D, D)


def _det_poly(m: EffectiveModel) -> np.polynomial.Polynomial:
    P = np.polynomial.Polynomial
    atom = P([m.gamma**2 + (m.omega0**2 if m.determinant_mode == "exact" else m.omega0**2 * (1 - m.x)),
              -2j * m.gamma, -1.0])
    if m.determinant_mode == "exact":
        cav = P([m.kappa**2 + m.omega**2, -2j * m.kappa, -1.0])
        return atom * cav - 4.0 * m.lam**2 * m.omega * m.omega0
    return atom * (m.kappa**2 + m.omega**2)


def resonances(m: EffectiveModel) -> list[tuple[float, float]]:
    """(position, half-width) of the low-frequency poles of the response, |Re nu| < omega/2."""
    poly = _det_poly(m)
    dpoly = poly.deriv()
    out = []
    for r in poly.roots():
        for _ in range(4):  # polish, coefficients span many decades
            d = dpoly(r)
            if d == 0:
                break
            r = r - poly(r) / d
        if abs(r.real) < 0.5 * m.omega:
            out.append((float(r.real), float(abs(r.imag))))
    return sorted(out)


def frequency_window(m: EffectiveModel) -> float:
    res = resonances(m)
    ws = max(abs(r[0]) for r in res)
    width = max(m.gamma, max(r[1] for r in res))
    return max(20.0 * m.omega0, ws + 40.0 * width)


# -- spectral densities -----------------------------------------------------


def _theta(nu, sign):
    # step function with the midpoint value at nu = 0
    return np.where(sign * nu > 0, 1.0, np.where(nu == 0, 0.5, 0.0))


def spectral_densities(nu, m: EffectiveModel):
    """Normally ordered spectrum S(nu) and pair spectrum Q(nu) of the fluctuations.

    G1_delta(tau) = int S e^{i nu tau} dnu,  <da da>(tau) = int Q e^{i nu tau} dnu.
    """
    nu = np.asarray(nu, dtype=float)
    e = matrix_elements(nu, m)
    r = matrix_elements(-nu, m)
    k, g, n = m.kappa / np.pi, m.gamma / np.pi, m.n_th
    neg, pos = _theta(nu, -1), _theta(nu, +1)
    S = k * np.abs(e.m12) ** 2 + g * ((1 + n) * np.abs(e.m14) ** 2 * neg + n * np.abs(r.m14) ** 2 * pos)
    Q = k * e.m12 * r.m11
    if m.pairing == "printed":
        Q = Q + g * ((1 + n) * e.m14 * r.m13 + n * m.xi * np.abs(r.m14) ** 2 * pos)
    else:
        Q = Q + g * ((1 + n) * e.m14 * r.m13 * neg + n * e.m13 * r.m14 * pos)
    return S, Q


# -- quadrature route -----------------------------------------------------------


def _breakpoints(m: EffectiveModel, lo: float, hi: float) -> np.ndarray:
    pts = [lo, hi]
    steps = np.concatenate([[0.0], 0.5 * 2.0 ** np.arange(0, 40)])
    for pos, width in resonances(m):
        h = max(width, 1e-9 * m.omega0)
        for s in steps:
            for q in (pos - h * s, pos + h * s):
                if lo < q < hi:
                    pts.append(q)
            if h * s > hi - lo:
                break
    if lo < 0 < hi:
        pts.append(0.0)
    return np.unique(pts)


def _fourier_quad(f, lo, hi, tau, m, tol, limit=200):
    """int_lo^hi f(nu) e^{i nu tau} dnu for complex f, split at the resonances."""
    pts = _breakpoints(m, lo, hi)
    segs = list(zip(pts[:-1], pts[1:]))
    fr = lambda v: f(v).real
    fi = lambda v: f(v).imag
    # L1 scale sets the absolute tolerance per segment
    scale = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for a, b in segs:
            scale += quad(lambda v: abs(f(v)), a, b, limit=50, epsrel=1e-4)[0]
    if scale == 0.0:
        return 0j
    eps = tol * scale / len(segs)
    total = 0j
    err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            for a, b in segs:
                if tau == 0:
                    vr, er = quad(fr, a, b, epsabs=eps, epsrel=tol, limit=limit)
                    vi, ei = quad(fi, a, b, epsabs=eps, epsrel=tol, limit=limit)
                    total += vr + 1j * vi
                    err += er + ei
                else:
                    rc, e1 = quad(fr, a, b, weight="cos", wvar=tau, epsabs=eps, epsrel=tol, limit=limit)
                    rs, e2 = quad(fr, a, b, weight="sin", wvar=tau, epsabs=eps, epsrel=tol, limit=limit)
                    ic, e3 = quad(fi, a, b, weight="cos", wvar=tau, epsabs=eps, epsrel=tol, limit=limit)
                    is_, e4 = quad(fi, a, b, weight="sin", wvar=tau, epsabs=eps, epsrel=tol, limit=limit)
                    total += (rc - is_) + 1j * (rs + ic)
                    err += e1 + e2 + e3 + e4
        except IntegrationWarning as exc:
            raise QuadratureError(f"overlap quadrature failed: {exc}", residual=err / scale) from exc
    if err > 10 * tol * scale:
        raise QuadratureError("overlap quadrature above tolerance", residual=err / scale)
    return total


def _integrands(m: EffectiveModel):
    def el(v):
        return matrix_elements(v, m, check=False)

    A = lambda v: np.abs(el(v).m12) ** 2 + 0j
    B = lambda v: np.abs(el(v).m14) ** 2 + 0j
    C = lambda v: el(v).m12 * el(-v).m11
    D = lambda v: el(v).m14 * el(-v).m13
    E = lambda v: el(v).m13 * el(-v).m14
    return A, B, C, D, E


def overlap_integrals(tau: float, m: EffectiveModel, tol: float = 1e-8):
    """Overlaps (A, B, C, D) at delay ``tau`` by adaptive quadrature.

    A and C, D run over the whole window, B over negative frequencies only.
    """
    m.check_stable()
    if m.lam == 0:
        return 0.0, 0j, 0j, 0j
    W = frequency_window(m)
    fA, fB, fC, fD, _ = _integrands(m)
    A = _fourier_quad(fA, -W, W, tau, m, tol)
    B = _fourier_quad(fB, -W, 0.0, tau, m, tol)
    C = _fourier_quad(fC, -W, W, tau, m, tol)
    D = _fourier_quad(fD, -W, W, tau, m, tol)
    return float(A.real), B, C, D


def overlap_B_alt(tau: float, m: EffectiveModel, tol: float = 1e-8) -> complex:
    """Second form of B: int_0^inf |m13|^2 e^{-i nu tau} dnu."""
    m.check_stable()
    if m.lam == 0:
        return 0j
    W = frequency_window(m)
    f = lambda v: np.abs(matrix_elements(v, m, check=False).m13) ** 2 + 0j
    return _fourier_quad(f, 0.0, W, -tau, m, tol)


def _pair_quad(tau: float, m: EffectiveModel, tol: float) -> complex:
    """Fluctuation part of <a a> by quadrature, following ``m.pairing``."""
    W = frequency_window(m)
    _, fB, fC, fD, fE = _integrands(m)
    k, g, n = m.kappa / np.pi, m.gamma / np.pi, m.n_th
    C = _fourier_quad(fC, -W, W, tau, m, tol)
    if m.gamma == 0:
        return k * C
    if m.pairing == "printed":
        D = _fourier_quad(fD, -W, W, tau, m, tol)
        B = _fourier_quad(fB, -W, 0.0, tau, m, tol)
        return k * C + g * ((1 + n) * D + n * m.xi * np.conj(B))
    Dn = _fourier_quad(fD, -W, 0.0, tau, m, tol)
    Ep = _fourier_quad(fE, 0.0, W, tau, m, tol) if n > 0 else 0j
    return k * C + g * ((1 + n) * Dn + n * Ep)


def _g1_delta_quad(tau: float, m: EffectiveModel, tol: float) -> complex:
    W = frequency_window(m)
    fA, fB, *_ = _integrands(m)
    A = _fourier_quad(fA, -W, W, tau, m, tol).real
    if m.gamma == 0:
        return m.kappa / np.pi * A + 0j
    B = _fourier_quad(fB, -W, 0.0, tau, m, tol)
    return m.kappa / np.pi * A + m.gamma / np.pi * ((1 + m.n_th) * B + m.n_th * np.conj(B))


# -- FFT route ------------------------------------------------------------------


def correlators_fft(m: EffectiveModel, dtau: float, n_tau: int, oversample: int | None = None,
                    min_period: float = 0.0):
    """Fluctuation correlators G1_delta and <da da> at tau_j = j*dtau, j < n_tau.

    The densities are sampled on a periodic frequency grid whose period in
    tau exceeds 40 decay times, so wrap-around is below e^-40.
    """
    m.check_stable()
    if m.lam == 0:
        z = np.zeros(n_tau, dtype=complex)
        return z, z.copy()
    W = frequency_window(m)
    if oversample is None:
        oversample = max(1, math.ceil(W * dtau / math.pi))
    dt = dtau / oversample
    if math.pi / dt < W:
        raise DomainError("tau step too coarse to resolve the spectral window")
    decay = min(max(w, 1e-300) for _, w in resonances(m))
    period = max(4.0 * dtau * n_tau, 40.0 / decay, min_period)
    M = sfft.next_fast_len(int(math.ceil(period / dt)))
    nu = 2 * np.pi * sfft.fftfreq(M, dt)
    dnu = 2 * np.pi / (M * dt)
    S, Q = spectral_densities(nu, m)
    cut = np.abs(nu) > W
    S[cut] = 0.0
    Q[cut] = 0.0
    idx = np.arange(n_tau) * oversample
    G = sfft.ifft(S)[idx] * (M * dnu)
    P = sfft.ifft(Q)[idx] * (M * dnu)
    return G, P


# -- correlation functions ------------------------------------------------------


def g2_from_parts(G1d, Pd, n_incoh: float, alpha: complex, pair0: complex, n_B: float):
    """Normalized g2 from fluctuation correlators and coherent amplitude.

    ``pair0`` is the coherent contribution to <a a>.
    """
    a2 = abs(alpha) ** 2
    n0 = n_incoh + a2
    if n0 + n_B == 0:
        raise DomainError("g2 undefined for zero total photon number")
    G2 = n0**2 + np.abs(G1d + a2) ** 2 + np.abs(Pd + pair0) ** 2 - 2 * a2**2
    return (G2 + 2 * n0 * n_B + n_B**2) / (n0 + n_B) ** 2


def _g1d_pair(tau, m: EffectiveModel, method: str, tol: float):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau < 0):
        raise DomainError("tau must be >= 0")
    m.check_stable() if m.lam != 0 else None
    if m.lam == 0:
        z = np.zeros(tau.shape, dtype=complex)
        return tau, z, z.copy(), 0.0
    if method == "quad":
        G = np.array([_g1_delta_quad(float(t), m, tol) for t in tau])
        P = np.array([_pair_quad(float(t), m, tol) for t in tau])
        n_inc = G[0].real if tau[0] == 0 else _g1_delta_quad(0.0, m, tol).real
        return tau, G, P, float(n_inc)
    if method == "fft":
        if len(tau) > 1:
            d = np.diff(tau)
            if tau[0] != 0 or not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise DomainError("fft route needs a uniform tau grid starting at 0")
            G, P = correlators_fft(m, float(d[0]), len(tau))
        else:
            if tau[0] != 0:
                raise DomainError("fft route needs a uniform tau grid starting at 0")
            G, P = correlators_fft(m, math.pi / frequency_window(m), 1)
        return tau, G, P, float(G[0].real)
    raise DomainError(f"unknown method {method!r}")


def g1(tau, m: EffectiveModel, method: str = "quad", tol: float = 1e-8):
    """First-order correlation G1(tau) including the coherent part |alpha|^2."""
    _, G, _, _ = _g1d_pair(tau, m, method, tol)
    out = G + abs(m.alpha) ** 2
    return out if np.ndim(tau) else complex(out[0])


def g2(tau, m: EffectiveModel, method: str = "quad", tol: float = 1e-8):
    """Normalized second-order correlation including the background n_B."""
    tau_a, G, P, n_inc = _g1d_pair(tau, m, method, tol)
    out = g2_from_parts(G, P, n_inc, m.alpha, m.coherent_pair, m.n_B)
    return out if np.ndim(tau) else float(out[0])


def pair_correlator(tau, m: EffectiveModel, method: str = "quad", tol: float = 1e-8):
    """<a(t) a(t+tau)> including the coherent part."""
    _, _, P, _ = _g1d_pair(tau, m, method, tol)
    out = P + m.coherent_pair
    return out if np.ndim(tau) else complex(out[0])


def correlation_curve(m: EffectiveModel, tau_max: float, points: int, method: str = "fft",
                      tol: float = 1e-8) -> CorrelationCurve:
    tau = np.linspace(0.0, tau_max, points)
    _, G, P, n_inc = _g1d_pair(tau, m, method, tol)
    a2 = abs(m.alpha) ** 2
    meta = {"omega_s": m.omega_s, "method": method, "pairing": m.pairing,
            "determinant_mode": m.determinant_mode}
    return CorrelationCurve(
        tau=tau, g1=G + a2, g2=g2_from_parts(G, P, n_inc, m.alpha, m.coherent_pair, m.n_B),
        photon_number=n_inc + a2, coherent_fraction=a2, x=m.x, meta=meta)


def incoherent_photon_number(m: EffectiveModel, tol: float = 1e-8) -> float:
    """<da' da> = G1(0) - |alpha|^2."""
    if m.lam == 0:
        return 0.0
    m.check_stable()
    return float(_g1_delta_quad(0.0, m, tol).real)


def density_fluctuation_variance(m: EffectiveModel, p: PhysicalParams | None = None,
                                 x: float | None = None, n_incoh: float | None = None) -> float:
    """<(db + db')^2> = 4 omega / (omega0 x) <da' da>."""
    x = m.x if x is None else x
    if x <= 0:
        raise DomainError("x must be > 0")
    omega = m.omega if p is None else p.omega
    omega0 = m.omega0 if p is None else p.omega0
    n = incoherent_photon_number(m) if n_incoh is None else n_incoh
    return 4.0 * omega / (omega0 * x) * n


def atomic_quadrature_variance(m: EffectiveModel, tol: float = 1e-7) -> float:
    """<(db + db')^2> from brute-force inversion of M (full Markov atomic bath).

    Independent of the closed-form elements; used as a consistency check.
    """
    m.check_stable()
    c2 = np.array([2 * m.kappa, 2 * m.kappa, 2 * m.gamma, 2 * m.gamma])

    def dens(v):
        Rp = np.linalg.inv(matrix_M(v, m))
        Rm = np.linalg.inv(matrix_M(-v, m))
        rp = Rp[2] + Rp[3]
        rm = Rm[2] + Rm[3]
        n = m.n_th
        val = (c2[0] * rp[0] * rm[1] + c2[2] * ((1 + n) * rp[2] * rm[3] + n * rp[3] * rm[2]))
        return val / (2 * np.pi)

    W = frequency_window(m)
    f = np.vectorize(dens, otypes=[complex])
    return float(_fourier_quad(f, -W, W, 0.0, m, tol).real)


def dominant_frequency(tau, y) -> float:
    """Angular frequency of the largest spectral peak of y(tau) - mean, with parabolic refinement.

    The lobe around zero frequency (a non-oscillating decay) is skipped up to
    the first local minimum of the spectrum; 0 is returned if there is none.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    y = (y - y.mean()) * np.hanning(len(y))
    n = sfft.next_fast_len(16 * len(y))
    P = np.abs(sfft.rfft(y, n))
    rising = np.flatnonzero(np.diff(P) > 0)
    if rising.size == 0:
        return 0.0
    k0 = int(rising[0])
    k = k0 + int(np.argmax(P[k0:]))
    if 0 < k < len(P) - 1:
        a, b, c = np.log(P[k - 1:k + 2] + 1e-300)
        k = k + 0.5 * (a - c) / (a - 2 * b + c)
    dt = tau[1] - tau[0]
    return 2 * np.pi * k / (n * dt)
