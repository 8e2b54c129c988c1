"""Ground-state fluctuations of the closed two-mode Dicke Hamiltonian.

In the normal phase the Hamiltonian is quadratic,

    H = omega a'a + omega0 b'b + lam (a + a')(b + b'),

which in quadratures q = (a + a')/sqrt(2), p = (a - a')/(i sqrt(2)) reads
H = (q^T V q + p^T T p)/2 with V = [[omega, 2 lam], [2 lam, omega0]] and
T = diag(omega, omega0). The ground-state covariances follow in closed form
from Omega^2 = T^(1/2) V T^(1/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .errors import ConvergenceError, DomainError
from .params import PhysicalParams, lambda_cr_closed


@dataclass(frozen=True)
class GroundStateFluctuations:
    photon_variance: float
    quadrature_variance: float
    x: float
    energy: float = float("nan")
    odd_parity_weight: float = float("nan")


def _coupling(p: PhysicalParams, x: float) -> float:
    if x < 0 or x >= 1:
        raise DomainError("closed-system fluctuations need 0 <= x < 1")
    return lambda_cr_closed(p) * np.sqrt(x)


def covariances(p: PhysicalParams, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized ground-state covariances <q q^T> and <p p^T> (modes a, b)."""
    lam = _coupling(p, x)
    V = np.array([[p.omega, 2 * lam], [2 * lam, p.omega0]])
    t = np.sqrt(np.array([p.omega, p.omega0]))
    W2 = t[:, None] * V * t[None, :]
    ev, U = linalg.eigh(W2)
    if ev[0] <= 0:
        raise DomainError("Hamiltonian is not bounded below at this coupling")
    w = np.sqrt(ev)
    Winv = (U / w) @ U.T
    W = (U * w) @ U.T
    qq = 0.5 * t[:, None] * Winv * t[None, :]
    pp = 0.5 * W / t[:, None] / t[None, :]
    return qq, pp


def ground_state_fluctuations(p: PhysicalParams, x: float) -> GroundStateFluctuations:
    """Exact second moments of the quadratic ground state, x relative to the closed threshold."""
    qq, pp = covariances(p, x)
    lam = _coupling(p, x)
    V = np.array([[p.omega, 2 * lam], [2 * lam, p.omega0]])
    T = np.diag([p.omega, p.omega0])
    # normal-ordered energy relative to the uncoupled vacuum
    energy = 0.5 * (np.sum(V * qq) + np.sum(T * pp)) - 0.5 * (p.omega + p.omega0)
    return GroundStateFluctuations(
        photon_variance=float(0.5 * (qq[0, 0] + pp[0, 0] - 1.0)),
        quadrature_variance=float(2.0 * qq[1, 1]),
        x=x,
        energy=float(energy),
    )


def _fock_moments(p: PhysicalParams, lam: float, na: int, nb: int):
    da, db = na + 1, nb + 1
    a = sparse.diags(np.sqrt(np.arange(1, da)), 1)
    b = sparse.diags(np.sqrt(np.arange(1, db)), 1)
    Ia, Ib = sparse.identity(da), sparse.identity(db)
    A = sparse.kron(a, Ib)
    B = sparse.kron(Ia, b)
    H = (p.omega * (A.T @ A) + p.omega0 * (B.T @ B) + lam * sparse.kron(a + a.T, b + b.T))
    # dense solve for the lowest eigenpair; sizes stay well below 10^4
    evals, evecs = linalg.eigh(H.toarray(), subset_by_index=[0, 0])
    psi = evecs[:, 0]
    nA = np.real(psi @ (A.T @ A @ psi))
    Xb = B + B.T
    xb2 = np.real(psi @ (Xb @ (Xb @ psi)))
    na_idx, nb_idx = np.divmod(np.arange(da * db), db)
    odd = np.sum(np.abs(psi[(na_idx + nb_idx) % 2 == 1]) ** 2)
    return float(evals[0]), float(nA), float(xb2), float(odd)


def fock_oracle(p: PhysicalParams, x: float, n_a_max: int = 10, n_b_max: int = 60,
                tol: float = 1e-3) -> GroundStateFluctuations:
    """Brute-force ground state on a truncated Fock grid.

    The truncation is checked by doubling both cutoffs; relative moment
    changes above ``tol`` raise :class:`ConvergenceError`.
    """
    if n_a_max < 2 or n_b_max < 2:
        raise DomainError("truncation sizes must be >= 2")
    lam = _coupling(p, x)
    e, na, xb2, odd = _fock_moments(p, lam, n_a_max, n_b_max)
    _, na2, xb22, _ = _fock_moments(p, lam, 2 * n_a_max, 2 * n_b_max)
    shift = max(abs(xb22 - xb2) / xb22, abs(na2 - na) / max(na2, 1e-300) if na2 > 1e-12 else 0.0)
    if shift > tol:
        raise ConvergenceError(f"Fock truncation not converged (relative shift {shift:.2e})",
                               residual=shift)
    return GroundStateFluctuations(photon_variance=na, quadrature_variance=xb2, x=x,
                                   energy=e, odd_parity_weight=odd)


def sweep(p: PhysicalParams, xs) -> list[GroundStateFluctuations]:
    return [ground_state_fluctuations(p, float(x)) for x in xs]
