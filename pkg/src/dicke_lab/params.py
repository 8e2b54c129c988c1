"""Physical constants, unit conventions and coupling parametrization.

All angular frequencies are stored in rad/s. Config files and the CLI
accept ordinary frequencies in Hz and convert at the boundary.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import constants

from .errors import ConfigError, DomainError

TWO_PI = 2.0 * math.pi
HBAR = constants.hbar
K_B = constants.k

CONVENTIONS = ("lambda", "two_lambda")


@dataclass(frozen=True)
class PhysicalParams:
    """Experimental constants of the BEC-cavity system.

    Attributes
    ----------
    N : atom number
    omega : pump-cavity detuning (rad/s)
    omega0 : atomic two-level splitting (rad/s)
    kappa : cavity field decay rate (rad/s)
    eta : total photon detection efficiency
    r_b : detector background count rate (1/s)
    T : atomic bath temperature (K)
    coupling_convention : ``"lambda"`` or ``"two_lambda"``; only affects
        :func:`kappa_eff`.
    """

    N: float = 1.6e5
    omega: float = TWO_PI * 10.0e6
    omega0: float = TWO_PI * 8.3e3
    kappa: float = TWO_PI * 1.25e6
    eta: float = 0.05
    r_b: float = 341.0
    T: float = 100e-9
    coupling_convention: str = "lambda"

    def __post_init__(self):
        if not self.N >= 1:
            raise DomainError(f"atom number must be >= 1, got {self.N}")
        for name in ("omega", "omega0", "kappa"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if not 0 < self.eta <= 1:
            raise DomainError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.r_b >= 0:
            raise DomainError("background rate r_b must be >= 0")
        if not self.T >= 0:
            raise DomainError("temperature must be >= 0")
        if self.coupling_convention not in CONVENTIONS:
            raise DomainError(
                f"coupling_convention must be one of {CONVENTIONS}, got {self.coupling_convention!r}"
            )

    def replace(self, **changes) -> "PhysicalParams":
        d = asdict(self)
        d.update(changes)
        return PhysicalParams(**d)

    @property
    def lambda_cr(self) -> float:
        """Open-system critical coupling (the one the relative coupling x refers to)."""
        return lambda_cr_open(self)

    @property
    def detection_scale(self) -> float:
        """Count rate per intracavity photon, 2*kappa*eta (1/s)."""
        return 2.0 * self.kappa * self.eta

    @property
    def n_background(self) -> float:
        """Background rate expressed as an equivalent intracavity photon number."""
        return self.r_b / self.detection_scale

    def coupling(self, x: float) -> float:
        """Coupling lambda (rad/s) at relative coupling x = (lambda/lambda_cr)^2."""
        if x < 0:
            raise DomainError("relative coupling x must be >= 0")
        return self.lambda_cr * math.sqrt(x)

    def relative_coupling(self, lam: float) -> float:
        return (lam / self.lambda_cr) ** 2

    # -- config I/O -------------------------------------------------------

    def to_config(self) -> dict[str, Any]:
        return {
            "N": self.N,
            "omega_hz": self.omega / TWO_PI,
            "omega0_hz": self.omega0 / TWO_PI,
            "kappa_hz": self.kappa / TWO_PI,
            "eta": self.eta,
            "r_b": self.r_b,
            "T_nK": self.T * 1e9,
            "coupling_convention": self.coupling_convention,
        }

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "PhysicalParams":
        unknown = set(cfg) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kw: dict[str, Any] = {}
        try:
            for key, value in cfg.items():
                attr, scale = CONFIG_KEYS[key]
                if attr == "coupling_convention":
                    kw[attr] = str(value).strip().strip("'\"")
                else:
                    kw[attr] = float(value) * scale
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


CONFIG_KEYS: dict[str, tuple[str, float]] = {
    "N": ("N", 1.0),
    "omega_hz": ("omega", TWO_PI),
    "omega0_hz": ("omega0", TWO_PI),
    "kappa_hz": ("kappa", TWO_PI),
    "eta": ("eta", 1.0),
    "r_b": ("r_b", 1.0),
    "T_nK": ("T", 1e-9),
    "coupling_convention": ("coupling_convention", 1.0),
}


def read_config(path: str | Path) -> dict[str, Any]:
    """Read a flat ``key = value`` file (TOML, or INI whose sections are merged)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        import tomli

        data = tomli.loads(text)
    except Exception:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string("[DEFAULT]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        data = dict(parser.defaults())
        for name in parser.sections():
            data.update({k: parser[name][k] for k in parser.options(name)})
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat, found table(s): {', '.join(nested)}")
    return data


def load_params(path: str | Path) -> PhysicalParams:
    return PhysicalParams.from_config(read_config(path))


@dataclass(frozen=True)
class CouplingPoint:
    x: float
    lam: float = field(default=float("nan"))

    @classmethod
    def at(cls, p: PhysicalParams, x: float) -> "CouplingPoint":
        return cls(x=x, lam=p.coupling(x))


def lambda_cr_closed(p: PhysicalParams) -> float:
    """Critical coupling of the closed Dicke Hamiltonian, sqrt(omega*omega0)/2."""
    return math.sqrt(p.omega * p.omega0) / 2.0


def lambda_cr_open(p: PhysicalParams) -> float:
    """Critical coupling with cavity decay, sqrt((kappa^2+omega^2)*omega0/(4*omega))."""
    return math.sqrt((p.kappa**2 + p.omega**2) * p.omega0 / (4.0 * p.omega))


def soft_mode_frequency(p: PhysicalParams, x):
    """Lowest polariton frequency omega0*sqrt(1-x) in the normal phase."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("soft mode is defined for 0 <= x <= 1 only")
    out = p.omega0 * np.sqrt(1.0 - x)
    return float(out) if out.ndim == 0 else out


def kappa_eff(p: PhysicalParams, lam: float) -> float:
    """Ground-state depletion rate lambda^2*kappa/(omega^2+kappa^2).

    Under the ``two_lambda`` convention the coupling entering the formula is 2*lambda.
    """
    if lam < 0:
        raise DomainError("coupling must be >= 0")
    lc = 2.0 * lam if p.coupling_convention == "two_lambda" else lam
    return lc**2 * p.kappa / (p.omega**2 + p.kappa**2)


def thermal_occupation(nu, T: float):
    """Bose occupation 1/(exp(hbar*nu/kB*T)-1); zero at T=0."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise DomainError("thermal occupation needs nu > 0")
    if T < 0:
        raise DomainError("temperature must be >= 0")
    if T == 0:
        out = np.zeros_like(nu)
    else:
        out = 1.0 / np.expm1(HBAR * nu / (K_B * T))
    return float(out) if out.ndim == 0 else out
