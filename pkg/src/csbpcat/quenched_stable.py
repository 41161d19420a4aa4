"""Closed-form quenched quantities for stable mechanisms and the exact
Feller (beta=1) sampler given one environment path.

Given the path, ``J_t = c_plus * beta * int_0^t exp(-beta K_s) ds`` and

    P(Y_t > 0 | path) = 1 - exp(-x0 * J_t**(-1/beta))
    E[exp(-lam exp(-K_t) Y_t) | path] = exp(-x0 * (J_t + lam**(-beta))**(-1/beta))

For beta = 1 the transition over an interval is compound Poisson with
exponential summands, which makes exact sampling at grid times possible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import JumpPath, PathBatch, exp_functional
from .mechanisms import StableMechanism, UnsupportedMechanism

__all__ = [
    "QuenchedStableResult",
    "AbsorptionEstimate",
    "functional_J",
    "quenched_survival",
    "quenched_result",
    "quenched_laplace",
    "absorption_limit",
    "survival_from_J",
    "sample_feller_grid",
    "feller_transition",
]

# Poisson means beyond this use a normal approximation (relative error ~1e-7)
_POISSON_MAX = 1e14


@dataclass(frozen=True)
class QuenchedStableResult:
    survival_prob: float
    functional_J: float
    path: JumpPath


@dataclass(frozen=True)
class AbsorptionEstimate:
    value: float          # exp(-x0 J_T^{-1/beta}), increasing in T
    horizon: float
    tail: float | None    # estimate of c_plus*beta*int_T^inf exp(-beta K_s) ds
    value_with_tail: float | None


def functional_J(mech: StableMechanism, path: JumpPath, t: float) -> float:
    return mech.c_plus * mech.beta * exp_functional(path, mech.beta, t)


def survival_from_J(J, x0: float, beta: float):
    """``1 - exp(-x0 * J**(-1/beta))`` evaluated in log space; works on arrays."""
    J = np.asarray(J, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        expo = np.exp(math.log(x0) - np.log(J) / beta)
    out = -np.expm1(-expo)
    return float(out) if out.ndim == 0 else out


def _check_path(path: JumpPath, t: float, mech: StableMechanism) -> None:
    if not isinstance(mech, StableMechanism):
        raise UnsupportedMechanism("closed forms need a StableMechanism")
    if abs(path.drift - mech.g) > 1e-12 * max(1.0, abs(mech.g)):
        raise ValueError(f"path drift {path.drift} differs from the mechanism growth rate {mech.g}")
    if t > path.horizon * (1 + 1e-12):
        raise ValueError(f"t={t} exceeds the path horizon {path.horizon}")


def quenched_survival(mech: StableMechanism, x0: float, t: float, path: JumpPath) -> float:
    """``P(Y_t > 0 | path)`` from the exact exponential functional."""
    return quenched_result(mech, x0, t, path).survival_prob


def quenched_result(mech: StableMechanism, x0: float, t: float,
                    path: JumpPath) -> QuenchedStableResult:
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    _check_path(path, t, mech)
    J = functional_J(mech, path, t)
    prob = 1.0 if J == 0.0 else survival_from_J(J, x0, mech.beta)
    return QuenchedStableResult(prob, J, path)


def quenched_laplace(mech: StableMechanism, x0: float, lam: float, t: float,
                     path: JumpPath) -> float:
    """``E[exp(-lam * exp(-K_t) * Y_t) | path]``."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    _check_path(path, t, mech)
    if lam == 0:
        return 1.0
    J = functional_J(mech, path, t)
    inner = J + (0.0 if math.isinf(lam) else lam ** (-mech.beta))
    if inner == 0.0:
        return 0.0
    return math.exp(-x0 * math.exp(-math.log(inner) / mech.beta))


def absorption_limit(mech: StableMechanism, x0: float, path: JumpPath,
                     drift_rate: float | None = None) -> AbsorptionEstimate:
    """Lower approximation of the eventual-absorption probability from ``[0, T]``.

    With ``drift_rate`` (the long-run slope of ``K``, positive in the
    supercritical regime) the remaining tail of the functional is estimated
    as ``c_plus * exp(-beta K_T) / drift_rate``.
    """
    _check_path(path, path.horizon, mech)
    T = path.horizon
    J = functional_J(mech, path, T)
    value = 1.0 - survival_from_J(J, x0, mech.beta)
    tail = with_tail = None
    if drift_rate is not None and drift_rate > 0:
        tail = mech.c_plus * mech.beta * math.exp(-mech.beta * path.K(T)) / (mech.beta * drift_rate)
        with_tail = 1.0 - survival_from_J(J + tail, x0, mech.beta)
    return AbsorptionEstimate(value, T, tail, with_tail)


def feller_transition(y: np.ndarray, J: np.ndarray, growth: np.ndarray, c_plus: float,
                      rng: np.random.Generator) -> np.ndarray:
    """One exact Feller-with-catastrophes transition, vectorised.

    ``J`` is ``int exp(-(K_s - K_a)) ds`` over the interval and ``growth``
    is ``exp(K_b - K_a)``.  Given ``Y_a = y`` the rescaled state
    ``Y_b/growth`` is a Poisson(``y/(c_plus J)``) sum of exponentials with
    mean ``c_plus J``.
    """
    y = np.asarray(y, dtype=float)
    scale = c_plus * np.asarray(J, dtype=float)
    out = y.copy()
    move = (y > 0) & (scale > 0)
    mean = np.zeros_like(y)
    mean[move] = y[move] / scale[move]
    big = move & (mean > _POISSON_MAX)
    small = move & ~big
    counts = np.zeros(y.shape)
    counts[small] = rng.poisson(mean[small])
    if big.any():
        counts[big] = np.round(mean[big] + np.sqrt(mean[big]) * rng.standard_normal(int(big.sum())))
    out[move] = rng.gamma(counts[move], 1.0) * scale[move] * growth[move]
    # no branching noise over a zero-length interval, only the catastrophe factor
    still = (y > 0) & ~(scale > 0)
    out[still] = y[still] * growth[still]
    return out


def sample_feller_grid(mech: StableMechanism, x0: float, grid_times, path: JumpPath,
                       seed, size: int | None = None):
    """Exact samples of ``Y`` at ``grid_times`` on a fixed path.

    Returns a list for ``size=None`` (one run) and an array of shape
    ``(size, len(grid_times))`` otherwise.
    """
    if mech.beta != 1.0:
        raise UnsupportedMechanism("exact path sampling is only available for beta = 1")
    grid = np.asarray(grid_times, dtype=float)
    if grid.size and (np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > path.horizon):
        raise ValueError("grid times must be increasing within [0, horizon]")
    _check_path(path, float(grid[-1]) if grid.size else 0.0, mech)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    reps = 1 if size is None else int(size)
    pos = grid > 0
    out = np.empty((reps, grid.size))
    out[:, ~pos] = x0
    if pos.any():
        inc, kv = path.as_batch().increments(1.0, grid[pos])
        kprev = np.concatenate(([0.0], kv[0, :-1]))
        y = np.full(reps, float(x0))
        for j, col in enumerate(np.flatnonzero(pos)):
            growth = np.full(reps, math.exp(kv[0, j] - kprev[j]))
            y = feller_transition(y, np.full(reps, inc[0, j]), growth, mech.c_plus, rng)
            out[:, col] = y
    return out[0].tolist() if size is None else out


def sample_feller_batch(mech: StableMechanism, x0: float, grid, batch: PathBatch,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One exact Feller run per path of ``batch``; returns ``(Y, K)`` on ``grid``."""
    if mech.beta != 1.0:
        raise UnsupportedMechanism("exact path sampling is only available for beta = 1")
    inc, kv = batch.increments(1.0, grid)
    n, m = kv.shape
    y = np.full(n, float(x0))
    out = np.empty((n, m))
    kprev = np.zeros(n)
    for j in range(m):
        y = feller_transition(y, inc[:, j], np.exp(kv[:, j] - kprev), mech.c_plus, rng)
        out[:, j] = y
        kprev = kv[:, j]
    return out, kv
