"""Parameter recovery from g2 estimates and critical-exponent extraction.

The model g2 of a coupling bin is the expectation of the pooled estimator:
subtraces at nodes x_j contribute with weights T_j R_j^2 (R the count rate),
runs carry phases phi uniformly distributed on the grid, and the
normalization by the subtrace's own mean rate adds the relative variance of
that mean (intensity fluctuations plus shot noise) to the denominator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .analysis import G2Estimate
from .errors import ConvergenceError, DomainError
from .meanfield import PHI_GRID_POINTS, phi_grid, steady_state
from .params import TWO_PI, PhysicalParams
from .spectral import EffectiveModel, correlators_fft

X_FLAG = 0.97


# -- tabulated bin model --------------------------------------------------------------


def gamma_grid(lo: float = TWO_PI * 10.0, hi: float = TWO_PI * 5000.0, n: int = 48) -> np.ndarray:
    return np.geomspace(lo, hi, n)


@dataclass
class NodeTable:
    """Fluctuation correlators at one coupling node on a log-spaced gamma grid."""

    x: float
    length: float  # subtrace length (s)
    weight: float  # total recording time at this node (s)
    lam: float
    splines: CubicSpline  # packs G, P (lags), n_incoh and the window integrals
    nlag: int

    def at(self, gamma: float):
        v = self.splines(math.log(gamma))
        k = self.nlag
        G, P = v[:k], v[k:2 * k]
        n_inc = v[2 * k].real
        I_reg, I_gg, I_pp = v[2 * k + 1].real, v[2 * k + 2].real, v[2 * k + 3].real
        I_p = v[2 * k + 4]
        return G, P, n_inc, (I_reg, I_gg, I_pp, I_p)


def _window_integrals(G: np.ndarray, P: np.ndarray, dtau: float, length: float):
    """Integrals of (1 - tau/L) times Re G, |G|^2, |P|^2 and P over [0, L]."""
    tau = np.arange(len(G)) * dtau
    w = np.clip(1.0 - tau / length, 0.0, None)
    f = lambda y: trapezoid(w * y, dx=dtau)
    return f(G.real), f(np.abs(G) ** 2), f(np.abs(P) ** 2), f(P)


def build_node(p: PhysicalParams, x: float, length: float, weight: float, nlag: int,
               dtau: float, gammas: np.ndarray, model_kw: dict | None = None) -> NodeTable:
    model_kw = model_kw or {}
    n_long = max(nlag, int(math.ceil(length / dtau)) + 1)
    rows = []
    for g in gammas:
        m = EffectiveModel.from_params(p, x, float(g), n_B=0.0, **model_kw)
        G, P = correlators_fft(m, dtau, n_long)
        I = _window_integrals(G, P, dtau, length)
        rows.append(np.concatenate([G[:nlag], P[:nlag], [G[0].real], np.array(I, dtype=complex)]))
    spl = CubicSpline(np.log(gammas), np.array(rows), axis=0)
    return NodeTable(x, length, weight, p.coupling(x), spl, nlag)


@dataclass
class BinModel:
    """Expected pooled g2 of one coupling bin as a function of (gamma, zeta)."""

    p: PhysicalParams
    nodes: list[NodeTable]
    tau: np.ndarray
    pairing: str = "consistent"
    n_phi: int = PHI_GRID_POINTS
    _alpha: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, p: PhysicalParams, nodes: np.ndarray, tau: np.ndarray,
              gammas: np.ndarray | None = None, pairing: str = "consistent",
              n_phi: int = PHI_GRID_POINTS, **model_kw) -> "BinModel":
        gammas = gamma_grid() if gammas is None else gammas
        dtau = float(tau[1] - tau[0])
        kw = dict(model_kw, pairing=pairing)
        tabs = [build_node(p, float(x), float(L), float(T), len(tau), dtau, gammas, kw)
                for x, L, T in np.atleast_2d(nodes)]
        return cls(p, tabs, np.asarray(tau), pairing, n_phi)

    def _alphas(self, j: int, zeta: float) -> tuple[np.ndarray, np.ndarray]:
        """Distinct alpha values over the phase grid and their multiplicities."""
        key = (j, round(abs(zeta), 9))
        if key not in self._alpha:
            z = np.round(np.abs(zeta * np.cos(phi_grid(self.n_phi))), 12)
            zu, cnt = np.unique(z, return_counts=True)
            lam = self.nodes[j].lam
            a = np.array([steady_state(self.p, lam, float(v)).alpha if v else 0j for v in zu])
            self._alpha[key] = (a, cnt / cnt.sum())
        return self._alpha[key]

    def g2(self, gamma: float, zeta: float) -> np.ndarray:
        p = self.p
        nB = p.n_background
        num = np.zeros(len(self.tau))
        den = np.zeros(len(self.tau))
        for j, node in enumerate(self.nodes):
            G, P, n_inc, (I_reg, I_gg, I_pp, I_p) = node.at(gamma)
            alpha, wphi = self._alphas(j, zeta)
            a2 = np.abs(alpha) ** 2
            if self.pairing == "printed":
                xi = (p.omega - 1j * p.kappa) ** 2 / (p.kappa**2 + p.omega**2)
                pair0 = xi * a2
            else:
                pair0 = alpha**2
            n0 = n_inc + a2
            ntot = n0 + nB
            # g2 - 1 including background, per phase value
            corr = (np.abs(G[None, :]) ** 2 + 2 * a2[:, None] * G.real[None, :] + np.abs(P[None, :]) ** 2
                    + 2 * np.real(P[None, :] * np.conj(pair0)[:, None])) / ntot[:, None] ** 2
            c = 2.0 / node.length * (I_gg + 2 * a2 * I_reg + I_pp + 2 * np.real(I_p * np.conj(pair0))) / ntot**2
            R = p.detection_scale * ntot
            lagw = np.clip(1.0 - self.tau / node.length, 0.0, None)
            wR = node.weight * wphi * R**2
            num += lagw * np.sum(wR[:, None] * (1.0 + corr), axis=0)
            den += lagw * np.sum(wphi * node.weight * (R**2 * (1.0 + c) + R / node.length))
        return num / den

    def g2_stationary(self, gamma: float, zeta: float) -> np.ndarray:
        """Rate-weighted phase average without the finite-subtrace normalization term."""
        p = self.p
        nB = p.n_background
        num = np.zeros(len(self.tau))
        den = 0.0
        for j, node in enumerate(self.nodes):
            G, P, n_inc, _ = node.at(gamma)
            alpha, wphi = self._alphas(j, zeta)
            a2 = np.abs(alpha) ** 2
            pair0 = alpha**2
            ntot = n_inc + a2 + nB
            corr = (np.abs(G[None, :]) ** 2 + 2 * a2[:, None] * G.real[None, :] + np.abs(P[None, :]) ** 2
                    + 2 * np.real(P[None, :] * np.conj(pair0)[:, None])) / ntot[:, None] ** 2
            w = node.weight * wphi * ntot**2
            num += np.sum(w[:, None] * (1 + corr), axis=0)
            den += np.sum(w)
        return num / den


# -- gamma / zeta fit -----------------------------------------------------------------


@dataclass
class FitResult:
    x: np.ndarray
    gamma: np.ndarray
    gamma_err: np.ndarray
    zeta: float
    zeta_err: float
    chi2_red: np.ndarray
    flagged: np.ndarray
    labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(), "labels": self.labels,
            "gamma": self.gamma.tolist(), "gamma_err": self.gamma_err.tolist(),
            "gamma_hz": (self.gamma / TWO_PI).tolist(),
            "zeta": self.zeta, "zeta_err": self.zeta_err,
            "chi2_red": self.chi2_red.tolist(), "flagged": self.flagged.tolist(),
        }


@dataclass
class _BinProblem:
    model: BinModel
    data: G2Estimate
    lg_lo: float
    lg_hi: float

    def chi2(self, gamma: float, zeta: float) -> float:
        r = (self.data.g2 - self.model.g2(gamma, zeta)) / self.data.err
        return float(r @ r)

    def chi2_log(self, lg: float, zeta: float) -> float:
        if not self.lg_lo <= lg <= self.lg_hi:
            # quadratic wall outside the tabulated range keeps the simplex inside
            edge = min(max(lg, self.lg_lo), self.lg_hi)
            return self.chi2(math.exp(edge), zeta) * (1.0 + 100.0 * (lg - edge) ** 2)
        return self.chi2(math.exp(lg), zeta)


def _simplex_1d(f, starts, xatol: float) -> tuple[float, float]:
    best = (math.inf, math.nan)
    for s in starts:
        r = optimize.minimize(lambda v: f(float(v[0])), [s], method="Nelder-Mead",
                              options={"xatol": xatol, "fatol": 1e-6, "initial_simplex": [[s], [s + 0.2]]})
        if r.fun < best[0]:
            best = (float(r.fun), float(r.x[0]))
    if not math.isfinite(best[0]):
        raise ConvergenceError("simplex search failed")
    return best[1], best[0]


def _fit_gamma(prob: _BinProblem, zeta: float, start: float | None, n_starts: int) -> tuple[float, float]:
    """Simplex on log(gamma) from the best points of a coarse scan (and a warm start)."""
    scan = np.linspace(prob.lg_lo, prob.lg_hi, max(2 * n_starts, 8))
    vals = [prob.chi2_log(v, zeta) for v in scan]
    order = np.argsort(vals)
    starts = [scan[i] for i in order[:n_starts]]
    if start is not None:
        starts = [start] + starts[:2]
    return _simplex_1d(lambda v: prob.chi2_log(v, zeta), starts, 1e-4)


def _curvature_error(f, x0: float, h: float) -> float:
    f0, fp, fm = f(x0), f(x0 + h), f(x0 - h)
    d2 = (fp - 2 * f0 + fm) / h**2
    if not d2 > 0:
        raise ConvergenceError(f"degenerate curvature at {x0:.6g} (d2 = {d2:.3g})", residual=d2)
    return math.sqrt(2.0 / d2)


def fit_gamma_zeta(data: list[G2Estimate], p: PhysicalParams, models: list[BinModel] | None = None,
                   zeta_bounds: tuple[float, float] = (0.0, 400.0), n_starts: int = 5,
                   x_flag: float = X_FLAG, flagged: list[bool] | None = None,
                   fixed_zeta: float | None = None, labels: list[str] | None = None,
                   **build_kw) -> FitResult:
    """Least-squares (gamma per bin, global zeta) with a multi-start simplex.

    Bins flagged (x above ``x_flag`` by default) get a gamma fit at the
    final zeta but do not constrain zeta.
    """
    if not data:
        raise DomainError("no g2 data to fit")
    if models is None:
        models = [BinModel.build(p, d.nodes if d.nodes is not None else np.array([[d.x, 1.0, 1.0]]),
                                 d.tau, **build_kw) for d in data]
    for d in data:
        if len(d.tau) < 3:
            raise DomainError("each bin needs at least 3 lag points")
    if flagged is None:
        flagged = [d.x > x_flag for d in data]
    flagged = np.array(flagged, dtype=bool)
    probs = []
    for mdl, d in zip(models, data):
        lg = mdl.nodes[0].splines.x  # knots are log(gamma)
        probs.append(_BinProblem(mdl, d, float(lg[0]), float(lg[-1])))
    core = [i for i in range(len(probs)) if not flagged[i]]
    if fixed_zeta is None and not core:
        raise DomainError("no unflagged bins to constrain zeta")

    lgam: dict[int, float] = {}

    def profile(z: float) -> float:
        z = abs(z)
        tot = 0.0
        for i in core:
            lg, c = _fit_gamma(probs[i], z, lgam.get(i), n_starts)
            lgam[i] = lg
            tot += c
        return tot

    if fixed_zeta is not None:
        zeta, zeta_err = float(fixed_zeta), 0.0
    else:
        zlo, zhi = zeta_bounds
        # coarse scan then simplex refinement from the best points
        scan = np.linspace(zlo, zhi, 17)
        first = [profile(z) for z in scan]
        starts = [scan[i] for i in np.argsort(first)[:2]]
        best = (math.inf, 0.0)
        for s in starts:
            r = optimize.minimize(lambda v: profile(min(max(v[0], zlo), zhi)) + 1e3 * max(0, v[0] - zhi, zlo - v[0]),
                                  [s], method="Nelder-Mead",
                                  options={"xatol": 0.05, "fatol": 1e-4,
                                           "initial_simplex": [[s], [s + 0.1 * (zhi - zlo)]]})
            if r.fun < best[0]:
                best = (float(r.fun), float(r.x[0]))
        zeta = min(max(abs(best[1]), zlo), zhi)
        chi_min = profile(zeta)
        zeta_err = _profile_error(profile, zeta, chi_min, zlo, zhi)

    gam = np.zeros(len(probs))
    gerr = np.zeros(len(probs))
    chi2 = np.zeros(len(probs))
    for i, prob in enumerate(probs):
        lg, c = _fit_gamma(prob, zeta, None, n_starts)
        gam[i] = math.exp(lg)
        s_lg = _curvature_error(lambda v: prob.chi2_log(v, zeta), lg, 0.02)
        gerr[i] = gam[i] * s_lg
        chi2[i] = c / max(len(prob.data.tau) - 1, 1)
    x = np.array([d.x for d in data])
    return FitResult(x, gam, gerr, zeta, zeta_err, chi2, flagged, labels or [f"{v:.4f}" for v in x])


def _profile_error(profile, z0: float, chi_min: float, lo: float, hi: float) -> float:
    """Half width of the profile interval chi2 <= chi_min + 1."""
    f = lambda z: profile(z) - chi_min - 1.0
    up = down = None
    step = max(1.0, 0.05 * z0)
    z = z0
    while z < hi:
        z2 = min(z + step, hi)
        if f(z2) > 0:
            up = optimize.brentq(f, z, z2, xtol=1e-3 * step)
            break
        z, step = z2, 2 * step
    step = max(1.0, 0.05 * z0)
    z = z0
    while z > lo:
        z2 = max(z - step, lo)
        if f(z2) > 0:
            down = optimize.brentq(f, z2, z, xtol=1e-3 * step)
            break
        z, step = z2, 2 * step
    if up is None:
        raise ConvergenceError("zeta profile does not rise by 1 within bounds (degenerate)")
    if down is None:
        return up - z0  # interval reaches the lower bound
    return 0.5 * (up - down)


# -- empirical gamma(x) ---------------------------------------------------------------


def empirical_gamma(x, c) -> np.ndarray:
    """c1 (1-x)^c2 exp(c3 x) + c4 (1-x)^c5 exp(c6 x)."""
    x = np.asarray(x, dtype=float)
    u = np.clip(1.0 - x, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = c[0] * np.where(u > 0, u ** c[1], 0.0 if c[1] > 0 else 1.0) * np.exp(c[2] * x)
        t2 = c[3] * np.where(u > 0, u ** c[4], 0.0 if c[4] > 0 else 1.0) * np.exp(c[5] * x)
    return t1 + t2


@dataclass
class EmpiricalGammaFit:
    c: np.ndarray
    residual_rms: float
    n_points: int

    def __call__(self, x):
        return empirical_gamma(x, self.c)


def fit_empirical_gamma(x, gamma, err=None, seed: int = 0) -> EmpiricalGammaFit:
    """Bounded least squares for the six-coefficient form, multi-start."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(gamma, dtype=float)
    if len(x) < 7:
        raise DomainError("need at least 7 gamma points")
    if np.any(x >= 1):
        raise DomainError("x must be < 1")
    s = np.ones_like(y) if err is None else np.maximum(np.asarray(err, dtype=float), 1e-12)
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if np.all(y == 0):
        return EmpiricalGammaFit(np.array([0.0, 1.0, 0.0, 0.0, 1.0, 0.0]), 0.0, len(x))
    lo = [0, 0.01, -60, 0, 0.01, -60]
    hi = [np.inf, 5, 60, np.inf, 5, 60]
    res = lambda c: (empirical_gamma(x, np.r_[c[0] * scale, c[1:3], c[3] * scale, c[4:]]) - y) / s
    rng = np.random.default_rng(seed)
    best = None
    starts = [np.array([1e-3, 0.25, 5.0, 1e-3, 1.0, 0.0])]
    starts += [np.array([rng.uniform(1e-4, 1), rng.uniform(0.05, 2), rng.uniform(-5, 15),
                         rng.uniform(1e-4, 1), rng.uniform(0.05, 2), rng.uniform(-5, 15)]) for _ in range(11)]
    for c0 in starts:
        try:
            r = optimize.least_squares(res, c0, bounds=(lo, hi), x_scale="jac", max_nfev=4000)
        except ValueError:
            continue
        if best is None or r.cost < best.cost:
            best = r
    if best is None or not best.success:
        raise ConvergenceError("empirical gamma fit did not converge")
    c = np.r_[best.x[0] * scale, best.x[1:3], best.x[3] * scale, best.x[4:]]
    rms = float(np.sqrt(np.mean((empirical_gamma(x, c) - y) ** 2)))
    return EmpiricalGammaFit(c, rms, len(x))


# -- density fluctuations and exponent --------------------------------------------------


@dataclass
class FluctuationCurve:
    x: np.ndarray
    variance: np.ndarray
    err: np.ndarray  # from the zeta uncertainty
    err_stat: np.ndarray  # from the photon-number errors


def coherent_photon_number(p: PhysicalParams, x: float, zeta: float, n_phi: int = PHI_GRID_POINTS) -> float:
    """Phase-averaged |alpha|^2 over the ensemble zeta cos(phi)."""
    if zeta == 0:
        return 0.0
    lam = p.coupling(x)
    return float(np.mean([abs(steady_state(p, lam, float(z)).alpha) ** 2
                          for z in zeta * np.cos(phi_grid(n_phi))]))


def density_fluctuations_from_nbar(x, nbar, p: PhysicalParams, zeta: float, zeta_err: float = 0.0,
                                   nbar_err=None, n_phi: int = PHI_GRID_POINTS) -> FluctuationCurve:
    """<(b + b')^2> = 4 omega/(omega0 x) * max(nbar - |alpha|^2, 0)."""
    x = np.asarray(x, dtype=float)
    nbar = np.asarray(nbar, dtype=float)
    if np.any(x <= 0):
        raise DomainError("x = 0 is excluded")
    if np.any(nbar < 0):
        raise DomainError("nbar must be >= 0")
    if np.any(x >= 1):
        raise DomainError("density fluctuations are defined below threshold")
    scale = 4.0 * p.omega / (p.omega0 * x)

    def var(z):
        a2 = np.array([coherent_photon_number(p, float(v), z, n_phi) for v in x])
        return scale * np.maximum(nbar - a2, 0.0)

    v = var(zeta)
    if zeta_err > 0:
        err = 0.5 * np.abs(var(max(zeta - zeta_err, 0.0)) - var(zeta + zeta_err))
    else:
        err = np.zeros_like(v)
    err_stat = scale * (np.zeros_like(v) if nbar_err is None else np.asarray(nbar_err, dtype=float))
    return FluctuationCurve(x, v, err, err_stat)


@dataclass
class PowerLawFit:
    exponent: float
    err: float
    x_range: tuple[float, float]
    n_points: int
    prefactor: float = float("nan")


def fit_power_law(x, variance, x_range: tuple[float, float] = (0.9, 1.0)) -> PowerLawFit:
    """OLS of log variance against log(1 - x); exponent = -slope."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(variance, dtype=float)
    sel = (x >= x_range[0] - 1e-12) & (x <= x_range[1] + 1e-12) & (x < 1)
    bad = sel & ~(v > 0)
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} non-positive variance point(s) excluded", stacklevel=2)
    sel &= v > 0
    n = int(sel.sum())
    if n < 4:
        raise DomainError(f"need >= 4 positive points in range, have {n}")
    lx = np.log(1.0 - x[sel])
    ly = np.log(v[sel])
    r = np.polyfit(lx, ly, 1, full=False, cov=False)
    slope, icpt = r
    resid = ly - (slope * lx + icpt)
    s2 = float(resid @ resid) / max(n - 2, 1)
    se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    se = max(se, 16 * np.finfo(float).eps * abs(slope))
    return PowerLawFit(float(-slope), se, (float(x_range[0]), float(x_range[1])), n, float(math.exp(icpt)))
