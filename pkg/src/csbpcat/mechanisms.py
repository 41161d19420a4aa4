"""Branching mechanisms ``psi`` and their centred part ``psi0``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, stats

__all__ = [
    "StableMechanism",
    "GeneralMechanism",
    "MuDensity",
    "psi",
    "psi0",
    "sandwich",
    "UnsupportedMechanism",
]


class UnsupportedMechanism(ValueError):
    pass


def _phi2(y: float) -> float:
    """(exp(-y) - 1 + y) / y**2 without cancellation near 0."""
    if y < 1e-4:
        return 0.5 - y / 6.0 + y * y / 24.0 - y * y * y / 120.0
    return (math.expm1(-y) + y) / (y * y)


def _check_lam(lam: float) -> None:
    if lam < 0 or lam != lam:
        raise ValueError(f"branching mechanisms are evaluated at lambda >= 0, got {lam}")


@dataclass(frozen=True)
class StableMechanism:
    """``psi(l) = -g l + c_plus l**(1+beta)``; ``beta == 1`` is Feller with ``sigma2 = c_plus``."""

    g: float
    c_plus: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.c_plus > 0:
            raise ValueError("c_plus must be positive")
        if not (0 < self.beta <= 1):
            raise ValueError("beta must lie in (0, 1]")

    def psi(self, lam):
        _check_lam(lam)
        return -self.g * lam + self.psi0(lam)

    def psi0(self, lam):
        _check_lam(lam)
        return self.c_plus * lam ** (1.0 + self.beta)

    @property
    def psi_prime0(self) -> float:
        return -self.g

    @property
    def is_trivial(self) -> bool:
        return False

    def kernel_args(self) -> dict:
        return {"kind": 0, "c_plus": self.c_plus, "beta": self.beta}

    def to_dict(self) -> dict:
        return {"kind": "stable", "g": self.g, "c_plus": self.c_plus, "beta": self.beta}


_MU_FAMILIES = {
    "exponential": lambda p: stats.expon(scale=float(p["scale"])),
    "gamma": lambda p: stats.gamma(float(p["shape"]), scale=float(p["scale"])),
    "uniform": lambda p: stats.uniform(loc=float(p["low"]), scale=float(p["high"]) - float(p["low"])),
}


@dataclass(frozen=True, eq=False)
class MuDensity:
    """Reproduction-jump density ``rate * law(dz)`` on (0, inf)."""

    family: str
    params: dict
    rate: float

    def __post_init__(self):
        if self.family not in _MU_FAMILIES:
            raise ValueError(f"unknown mu density family {self.family!r}")
        if not self.rate > 0:
            raise ValueError("mu density rate must be positive")

    @cached_property
    def dist(self):
        d = _MU_FAMILIES[self.family](self.params)
        if d.support()[0] < 0:
            raise ValueError("mu must live on (0, inf)")
        return d

    def integral(self, lam: float) -> float:
        """``rate * E[exp(-lam Z) - 1 + lam Z]``."""
        if lam == 0:
            return 0.0
        lo, hi = self.dist.support()
        val, _ = integrate.quad(lambda z: z * z * _phi2(lam * z) * self.dist.pdf(z),
                                lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
        return self.rate * lam * lam * val

    def second_moment(self) -> float:
        return self.rate * float(self.dist.moment(2))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "rate": self.rate}


@dataclass(frozen=True)
class GeneralMechanism:
    """``psi(l) = -g l + sigma2 l**2 + int (e^{-l z} - 1 + l z) mu(dz)``.

    ``mu_atoms`` is a tuple of ``(z, rate)`` pairs.
    """

    g: float
    sigma2: float = 0.0
    mu_atoms: tuple = ()
    mu_density: MuDensity | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mu_atoms", tuple((float(z), float(r)) for z, r in self.mu_atoms))
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        for z, r in self.mu_atoms:
            if not (z > 0 and r > 0):
                raise ValueError("mu atoms need z > 0 and rate > 0")

    def psi0(self, lam):
        _check_lam(lam)
        val = self.sigma2 * lam * lam
        for z, r in self.mu_atoms:
            val += r * z * z * lam * lam * _phi2(lam * z)
        if self.mu_density is not None:
            val += self.mu_density.integral(lam)
        return val

    def psi(self, lam):
        return -self.g * lam + self.psi0(lam)

    @property
    def psi_prime0(self) -> float:
        return -self.g

    @property
    def is_trivial(self) -> bool:
        return self.sigma2 == 0 and not self.mu_atoms and self.mu_density is None

    def second_moment(self) -> float:
        c = sum(r * z * z for z, r in self.mu_atoms)
        if self.mu_density is not None:
            c += self.mu_density.second_moment()
        return c

    def kernel_args(self) -> dict:
        if self.mu_density is not None:
            return {"kind": 2, "psi0": self.psi0}
        z = np.array([a for a, _ in self.mu_atoms], dtype=float)
        rho = np.array([b for _, b in self.mu_atoms], dtype=float)
        return {"kind": 1, "sigma2": self.sigma2, "z": z, "rho": rho}

    def to_dict(self) -> dict:
        out = {"kind": "general", "g": self.g, "sigma2": self.sigma2,
               "mu_atoms": [{"z": z, "rate": r} for z, r in self.mu_atoms]}
        if self.mu_density is not None:
            out["mu_density"] = self.mu_density.to_dict()
        return out


def psi(mech, lam):
    return mech.psi(lam)


def psi0(mech, lam):
    return mech.psi0(lam)


def sandwich(mech: GeneralMechanism) -> tuple[GeneralMechanism, GeneralMechanism]:
    """Quadratic mechanisms ``psi_minus <= psi <= psi_plus``.

    Both keep ``psi'(0)``; the diffusion coefficients are ``sigma2`` and
    ``sigma2 + c/2`` with ``c`` the second moment of ``mu``.
    """
    if not mech.sigma2 > 0:
        raise UnsupportedMechanism("the quadratic sandwich needs sigma2 > 0")
    c = mech.second_moment()
    if not math.isfinite(c):
        raise UnsupportedMechanism("the quadratic sandwich needs a finite second moment of mu")
    return (GeneralMechanism(mech.g, mech.sigma2),
            GeneralMechanism(mech.g, mech.sigma2 + 0.5 * c))


def as_feller(mech: GeneralMechanism) -> StableMechanism:
    """The stable (beta=1) form of a purely diffusive mechanism."""
    if mech.mu_atoms or mech.mu_density is not None or not mech.sigma2 > 0:
        raise UnsupportedMechanism("only mu=0, sigma2>0 mechanisms are Feller")
    return StableMechanism(mech.g, mech.sigma2, 1.0)
