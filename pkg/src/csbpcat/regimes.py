"""Regime classification and survival-rate prediction.

The sign of ``phi_K'(0)`` separates supercritical, critical and
subcritical environments; in the subcritical case the sign of
``phi_K'(1)`` decides between the strong, intermediate and weak regimes.
Predicted annealed survival is ``t**(-kappa) * exp(rate * t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .env import Atom, EnvironmentSpec, TabulatedComponent, phi_K, phi_K_prime

__all__ = ["RegimeReport", "RegimeError", "classify", "find_tau", "fit_rate", "scaled",
           "predicted_log_survival", "LABELS"]

LABELS = ("Supercritical", "Critical", "StronglySubcritical",
          "IntermediateSubcritical", "WeaklySubcritical")


class RegimeError(ValueError):
    pass


@dataclass(frozen=True)
class RegimeReport:
    label: str
    phi_prime_0: float
    phi_prime_1: float | None
    tau: float | None
    exp_rate: float
    poly_exponent: float
    phi_K_1: float | None = None

    def __str__(self) -> str:
        return f"{self.label} rate={self.exp_rate:.6g} kappa={self.poly_exponent:g}"

    def row(self) -> dict:
        return {"label": self.label, "phi_prime_0": self.phi_prime_0,
                "phi_prime_1": self.phi_prime_1, "tau": self.tau,
                "exp_rate": self.exp_rate, "poly_exponent": self.poly_exponent}


def _zero_tol(g: float) -> float:
    return 1e-9 * (1.0 + abs(g))


def _need(spec: EnvironmentSpec, bound: float, regime: str, requirement: str) -> None:
    if not spec.theta_max > bound:
        raise RegimeError(f"{regime} needs {requirement} (theta_max > {bound:g}); "
                          f"this environment has theta_max = {spec.theta_max:g}")


def classify(spec: EnvironmentSpec, g: float, beta: float = 1.0) -> RegimeReport:
    """Regime of the process with growth rate ``g`` in environment ``spec``.

    ``beta`` only enters the moment requirements checked on ``theta_max``.
    """
    env = spec.with_drift(g)
    tol = _zero_tol(g)
    d0 = phi_K_prime(env, 0.0)
    if d0 > tol:
        return RegimeReport("Supercritical", d0, None, None, 0.0, 0.0)
    if abs(d0) <= tol:
        _need(env, beta, "the critical regime", "a finite moment of order beta")
        return RegimeReport("Critical", d0, None, None, 0.0, 0.5)
    _need(env, 1.0, "the subcritical regime", "a finite first moment of the multipliers")
    d1 = phi_K_prime(env, 1.0)
    pk1 = phi_K(env, 1.0)
    if d1 < -tol:
        return RegimeReport("StronglySubcritical", d0, d1, None, pk1, 0.0, pk1)
    if abs(d1) <= tol:
        return RegimeReport("IntermediateSubcritical", d0, d1, None, pk1, 0.5, pk1)
    _need(env, beta + 1.0, "the weakly subcritical regime",
          "a finite moment of order beta + 1")
    tau = find_tau(env, g)
    return RegimeReport("WeaklySubcritical", d0, d1, tau, phi_K(env, tau), 1.5, pk1)


def find_tau(spec: EnvironmentSpec, g: float) -> float:
    """Root of ``phi_K'`` in ``(0, 1)``, the minimiser of ``phi_K`` there."""
    env = spec.with_drift(g)
    if not env.theta_max > 1.0:
        raise RegimeError("find_tau needs theta_max > 1")
    lo, hi = phi_K_prime(env, 0.0), phi_K_prime(env, 1.0)
    if not (lo < 0.0 < hi):
        raise RegimeError(f"find_tau needs phi_K'(0) < 0 < phi_K'(1), got {lo:g} and {hi:g}")
    tau = optimize.bisect(lambda x: phi_K_prime(env, x), 0.0, 1.0,
                          xtol=1e-15, rtol=1e-15, maxiter=200)
    if abs(phi_K_prime(env, tau)) > 1e-12 * max(1.0, abs(g)):
        raise RegimeError(f"root of phi_K' not resolved: residual {phi_K_prime(env, tau):g}")
    grid = np.arange(1, 1000) / 1000.0
    vals = np.array([phi_K(env, s) for s in grid])
    if phi_K(env, tau) > vals.min() + 1e-12 * (1.0 + abs(vals.min())):
        raise RegimeError("phi_K(tau) is not the minimum over (0, 1)")
    return float(tau)


def fit_rate(series) -> tuple[float, float, float]:
    """Weighted fit of ``log a(t) = rho t - kappa log t + c``.

    ``series`` holds ``(t, estimate, stderr)``.  Weights are
    ``(estimate / stderr)**2``; if any stderr is zero all points weigh the
    same.  Returns ``(rho, kappa, r2)``.
    """
    rows = [(float(t), float(a), float(s)) for t, a, s in series]
    rows = [r for r in rows if r[1] > 0 and r[0] > 0]
    if len(rows) < 4:
        raise ValueError(f"fit_rate needs at least 4 positive estimates, got {len(rows)}")
    t = np.array([r[0] for r in rows])
    a = np.array([r[1] for r in rows])
    s = np.array([r[2] for r in rows])
    y = np.log(a)
    w = (a / s) ** 2 if np.all(s > 0) else np.ones_like(a)
    X = np.column_stack((t, np.log(t), np.ones_like(t)))
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    fitted = X @ coef
    ybar = np.average(y, weights=w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * (y - fitted) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(-coef[1]), r2


def scaled(spec: EnvironmentSpec, c: float) -> EnvironmentSpec:
    """Same environment with time sped up by ``c`` (all rates and the drift scaled)."""
    if not c > 0:
        raise ValueError("c must be positive")
    atoms = tuple(Atom(a.m, a.rate * c) for a in spec.atoms)
    if any(isinstance(k, TabulatedComponent) for k in spec.components):
        raise ValueError("tabulated components cannot be rescaled")
    comps = tuple(replace(k, rate=k.rate * c) for k in spec.components)
    return EnvironmentSpec(spec.drift * c, atoms, comps)


def predicted_log_survival(report: RegimeReport, t) -> np.ndarray:
    """``rate * t - kappa * log t`` (the unknown constant is dropped)."""
    t = np.asarray(t, dtype=float)
    return report.exp_rate * t - report.poly_exponent * np.log(t)

