"""Semiclassical steady state of the driven-damped Dicke model.

The atomic coherence beta solves the scalar self-consistency relation

    beta = x (beta + zeta) sqrt(1 - 4 beta^2 / N^2),    x = (lam / lam_cr)^2,

with lam_cr the open-system critical coupling. The cavity amplitude follows as
alpha = 2 lam (beta + zeta) / ((i kappa - omega) sqrt(N)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError
from .params import PhysicalParams, lambda_cr_open

PHI_GRID_POINTS = 32


@dataclass(frozen=True)
class SteadyState:
    alpha: complex
    beta: float
    w: float
    branch: str  # "plus" | "minus" | "normal"

    @property
    def photon_number(self) -> float:
        return abs(self.alpha) ** 2


@dataclass(frozen=True)
class RenormalizedParams:
    omega0_t: float
    lambda_t: float
    mu: float


def _alpha(p: PhysicalParams, lam: float, beta: float, zeta: float) -> complex:
    return 2.0 * lam * (beta + zeta) / ((1j * p.kappa - p.omega) * math.sqrt(p.N))


def _make_state(p, lam, beta, zeta, branch) -> SteadyState:
    half = p.N / 2.0
    w = -math.sqrt(max(half * half - beta * beta, 0.0))
    return SteadyState(alpha=_alpha(p, lam, beta, zeta), beta=beta, w=w, branch=branch)


def steady_state(p: PhysicalParams, lam: float, zeta: float = 0.0) -> SteadyState:
    """Mean-field fixed point (alpha, beta, w) at coupling ``lam`` (rad/s).

    For zeta != 0 the branch connected to beta(lam=0) = 0 with sign(zeta)
    is returned; for zeta == 0 above threshold the positive ("plus") branch.
    """
    if lam < 0:
        raise DomainError("coupling must be >= 0")
    half = p.N / 2.0
    if abs(zeta) >= half:
        raise DomainError("|zeta| must be smaller than N/2")
    x = (lam / lambda_cr_open(p)) ** 2
    if x == 0.0:
        return _make_state(p, lam, 0.0, zeta, "normal")

    if zeta == 0.0:
        if x <= 1.0:
            return _make_state(p, lam, 0.0, zeta, "normal")
        # divide out the trivial root: x sqrt(1 - 4 b^2/N^2) = 1, monotone in b
        f = lambda b: x * math.sqrt(max(1.0 - 4.0 * b * b / p.N**2, 0.0)) - 1.0
        lo, hi = 0.0, half
        branch = "plus"
        sign = 1.0
    else:
        sign = math.copysign(1.0, zeta)
        z = abs(zeta)
        f = lambda b: x * (b + z) * math.sqrt(max(1.0 - 4.0 * b * b / p.N**2, 0.0)) - b
        lo, hi = 0.0, half
        branch = "plus" if sign > 0 else "minus"

    try:
        b, info = brentq(f, lo, hi, xtol=1e-14 * p.N, rtol=4 * np.finfo(float).eps,
                         maxiter=500, full_output=True, disp=False)
    except ValueError as exc:  # bracket failure
        raise ConvergenceError(f"steady state bracket failed: {exc}") from exc
    if not info.converged:
        raise ConvergenceError("steady state root finder did not converge",
                               residual=abs(f(b)))
    beta = sign * b
    resid = beta - x * (beta + zeta) * math.sqrt(max(1.0 - 4.0 * beta**2 / p.N**2, 0.0))
    if abs(resid) > 1e-12 * p.N:
        raise ConvergenceError("steady state residual above tolerance", residual=abs(resid))
    return _make_state(p, lam, beta, zeta, branch)


def steady_state_x(p: PhysicalParams, x: float, zeta: float = 0.0) -> SteadyState:
    return steady_state(p, p.coupling(x), zeta)


def steady_state_closed_form(p: PhysicalParams, lam: float) -> float:
    """Positive bifurcation branch for zeta = 0."""
    x = (lam / lambda_cr_open(p)) ** 2
    if x <= 1.0:
        return 0.0
    return 0.5 * p.N * math.sqrt(1.0 - 1.0 / x**2)


def hp_renormalize(p: PhysicalParams, s: SteadyState, lam: float) -> RenormalizedParams:
    """Renormalized splitting, coupling and squeezing term around the mean field."""
    beta = s.beta
    if abs(beta) >= p.N:
        raise DomainError("|beta| must be smaller than N")
    root = math.sqrt(1.0 - beta**2 / p.N**2)
    shift = lam * s.alpha.real * beta / (p.N**1.5 * root)
    return RenormalizedParams(
        omega0_t=p.omega0 - 2.0 * shift,
        lambda_t=lam * (1.0 - 2.0 * beta**2 / p.N**2) / root,
        mu=-shift,
    )


def ensemble_zeta(zeta: float, phi):
    """Projected symmetry-breaking field zeta*cos(phi)."""
    return zeta * np.cos(phi)


def phi_grid(n: int = PHI_GRID_POINTS) -> np.ndarray:
    """Uniform phase grid on [0, 2 pi) used for ensemble averages."""
    return 2.0 * np.pi * np.arange(n) / n


def alpha_ensemble(p: PhysicalParams, x: float, zeta: float, n_phi: int = PHI_GRID_POINTS) -> np.ndarray:
    """Coherent amplitudes alpha(zeta cos phi) on the uniform phase grid."""
    lam = p.coupling(x)
    return np.array([steady_state(p, lam, float(z)).alpha
                     for z in ensemble_zeta(zeta, phi_grid(n_phi))])


def sweep(p: PhysicalParams, xs, zeta: float = 0.0) -> list[SteadyState]:
    return [steady_state(p, p.coupling(float(x)), zeta) for x in xs]
