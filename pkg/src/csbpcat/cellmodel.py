"""Parasites in a dividing cell population.

Parasites grow as a Feller diffusion (growth ``g``, variance ``sigma2``).
Cells divide at rate ``r`` and a fraction ``Theta`` of the parasites goes to
one daughter.  Following an infected lineage picks up divisions at the
size-biased rate ``2r``, so the parasite load along it is a branching process
with catastrophes ``nu(dx) = 2r P(Theta in dx)``.  The mean number of
infected cells is ``E[N*_t] = exp(r t) P(Y_t > 0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Atom, BetaComponent, EnvironmentSpec
from .mechanisms import StableMechanism
from .montecarlo import SurvivalEstimate, annealed_survival
from .regimes import classify

__all__ = [
    "TwoPointTheta",
    "BetaTheta",
    "CellModel",
    "InfectedReport",
    "to_environment",
    "infected_regime",
    "alpha",
    "golden_section",
    "boundary_supercritical",
    "boundary_strong",
    "phase_diagram",
    "mean_infected",
]


@dataclass(frozen=True)
class TwoPointTheta:
    """``P(Theta = theta) = P(Theta = 1 - theta) = 1/2``."""

    theta: float

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    def _points(self):
        return (self.theta, 1.0 - self.theta)

    def moment(self, lam: float) -> float:
        return 0.5 * sum(x ** lam for x in self._points())

    def mean_log(self) -> float:
        return 0.5 * sum(math.log(x) for x in self._points())

    def mean_x_log(self) -> float:
        return 0.5 * sum(x * math.log(x) for x in self._points())

    def catastrophes(self, rate: float):
        if self.theta == 0.5:
            return (Atom(0.5, rate),), ()
        return tuple(Atom(x, 0.5 * rate) for x in self._points()), ()

    def to_dict(self) -> dict:
        return {"law": "two_point", "theta": self.theta}


@dataclass(frozen=True)
class BetaTheta:
    """``Theta ~ Beta(a, b)``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")

    def _comp(self, rate: float = 1.0) -> BetaComponent:
        return BetaComponent(self.a, self.b, rate)

    def moment(self, lam: float) -> float:
        return self._comp().moment(lam)

    def mean_log(self) -> float:
        return float(self._comp().dmoment(0.0))

    def mean_x_log(self) -> float:
        return self.a / (self.a + self.b) * float(self._comp().tilt(1.0).dmoment(0.0))

    def catastrophes(self, rate: float):
        return (), (self._comp(rate),)

    def to_dict(self) -> dict:
        return {"law": "beta", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class CellModel:
    g: float
    sigma2: float
    r: float
    theta_law: TwoPointTheta | BetaTheta

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("division rate r must be positive")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    def to_dict(self) -> dict:
        return {"g": self.g, "sigma2": self.sigma2, "r": self.r, "theta": self.theta_law.to_dict()}


def to_environment(model: CellModel, biased: bool = True):
    """``(EnvironmentSpec, StableMechanism)`` seen along an infected lineage.

    ``biased=False`` uses the plain division rate ``r`` instead of ``2r``;
    it does not describe a typical lineage and is only for sensitivity runs.
    """
    rate = 2.0 * model.r if biased else model.r
    atoms, comps = model.theta_law.catastrophes(rate)
    return (EnvironmentSpec(model.g, atoms, comps),
            StableMechanism(model.g, model.sigma2, 1.0))


def golden_section(f, a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    """Minimiser and minimum of a unimodal ``f`` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    # the end points are candidates too (the minimum can sit on the boundary)
    cands = [(f(a), a), (f(b), b), (fc, c), (fd, d)]
    fmin, xmin = min(cands)
    return xmin, fmin


def alpha(model: CellModel) -> float:
    """``min over [0, 1] of g l + 2 r (E[Theta**l] - 1/2)``."""
    def obj(lam):
        return model.g * lam + 2.0 * model.r * (model.theta_law.moment(lam) - 0.5)

    return golden_section(obj, 0.0, 1.0)[1]


@dataclass(frozen=True)
class InfectedReport:
    label: str
    growth_rate: float       # exponential rate of E[N*_t]
    poly_exponent: float     # E[N*_t] ~ c t**(-poly_exponent) exp(growth_rate t)
    alpha: float | None

    def __str__(self) -> str:
        return f"{self.label} growth={self.growth_rate:.6g} kappa={self.poly_exponent:g}"


def infected_regime(model: CellModel, biased: bool = True) -> InfectedReport:
    spec, mech = to_environment(model, biased)
    rep = classify(spec, mech.g, mech.beta)
    growth = model.r + rep.exp_rate
    a = None
    if rep.label == "WeaklySubcritical":
        a = alpha(model) if biased else growth
    return InfectedReport(rep.label, growth, rep.poly_exponent, a)


def boundary_supercritical(theta):
    """``g/r`` above which a symmetric two-point split is supercritical."""
    theta = np.asarray(theta, dtype=float)
    return -np.log(theta * (1.0 - theta))


def boundary_strong(theta):
    """``g/r`` below which a symmetric two-point split is strongly subcritical."""
    theta = np.asarray(theta, dtype=float)
    return -(theta * np.log(theta) + (1.0 - theta) * np.log1p(-theta))


def phase_diagram(theta_grid, gr_grid, r: float = 1.0, sigma2: float = 1.0) -> list[dict]:
    """Regime label on a ``(theta, g/r)`` grid with both boundary curves."""
    rows = []
    for th in theta_grid:
        th = float(th)
        if not 0 < th <= 0.5:
            raise ValueError("theta must lie in (0, 1/2]")
        b_sup = float(boundary_supercritical(th))
        b_str = float(boundary_strong(th))
        for gr in gr_grid:
            model = CellModel(float(gr) * r, sigma2, r, TwoPointTheta(th))
            spec, mech = to_environment(model)
            label = classify(spec, mech.g).label
            rows.append({"theta": th, "g_over_r": float(gr), "label": label,
                         "boundary_supercritical": b_sup, "boundary_strong": b_str})
    return rows


def mean_infected(model: CellModel, t: float, n: int, seed: int, method: str = "plain",
                  x0: float = 1.0, workers: int | None = None) -> SurvivalEstimate:
    """``exp(r t) P(Y_t > 0)`` with the standard error scaled alike."""
    if not t > 0:
        raise ValueError("t must be positive")
    spec, mech = to_environment(model)
    est = annealed_survival(mech, x0, spec, t, n, method, seed, workers)
    scale = math.exp(model.r * t)
    return SurvivalEstimate(scale * est.value, scale * est.stderr, est.n, est.method, est.t)
