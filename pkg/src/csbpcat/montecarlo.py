"""Annealed estimators over sampled environments.

The estimand is ``a_F(t) = E[F(int_0^t exp(-beta K_s) ds)]``.  Survival of
a stable process is the special case ``F(x) = 1 - exp(-x0 (c_plus beta x)**(-1/beta))``,
which averages the quenched closed form instead of simulating ``Y``.

Variance reduction is a single Esscher tilt: paths are drawn under the
tilted environment and weighted by ``exp(-lam K_t + t phi_K(lam))``.

Paths come in fixed chunks with counter-derived streams (see ``env``),
so estimates depend on the seed only, not on ``n`` ordering or workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from . import kernels
from .env import (CHUNK, Atom, EnvironmentSpec, PathBatch, esscher_spec, phi_K,
                  sample_chunk)
from .mechanisms import StableMechanism, UnsupportedMechanism
from .quenched_stable import sample_feller_batch, survival_from_J
from .regimes import classify

__all__ = [
    "SurvivalForm",
    "GeneralForm",
    "SurvivalEstimate",
    "a_F",
    "a_F_plain",
    "a_F_esscher",
    "annealed_survival",
    "annealed_survival_grid",
    "auto_tilt",
    "parse_method",
    "clt_check",
    "CltReport",
    "martingale_check",
    "MartingaleReport",
    "w_limit_estimate",
    "WLimitReport",
    "sandwich_means",
]


@dataclass(frozen=True)
class SurvivalForm:
    """``F(x) = 1 - exp(-x0 (c_plus beta x)**(-1/beta))``, with ``F(0) = 1``."""

    x0: float
    c_plus: float
    beta: float = 1.0

    def __post_init__(self):
        if not (self.x0 > 0 and self.c_plus > 0 and 0 < self.beta <= 1):
            raise ValueError("need x0 > 0, c_plus > 0 and beta in (0, 1]")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        pos = x > 0
        out[pos] = survival_from_J(self.c_plus * self.beta * x[pos], self.x0, self.beta)
        return out


@dataclass(frozen=True, eq=False)
class GeneralForm:
    """``F(x) = C_F (1+x)**(-1/beta) * (1 + (1+x)**(-varsigma) h(x))``."""

    C_F: float
    beta: float
    varsigma: float
    h: Callable

    def __post_init__(self):
        if not (self.C_F > 0 and 0 < self.beta <= 1 and self.varsigma >= 1):
            raise ValueError("need C_F > 0, beta in (0, 1] and varsigma >= 1")
        grid = np.concatenate(([0.0], np.logspace(-3, 4, 200)))
        vals = self(grid)
        if np.any(vals <= 0) or np.any(np.diff(vals) > 1e-12 * np.abs(vals[:-1])):
            raise ValueError("F must be positive and nonincreasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        hx = np.asarray(np.vectorize(self.h, otypes=[float])(x), dtype=float)
        return self.C_F * (1 + x) ** (-1.0 / self.beta) * (1 + (1 + x) ** (-self.varsigma) * hx)


@dataclass(frozen=True)
class SurvivalEstimate:
    value: float
    stderr: float
    n: int
    method: str
    t: float


def _default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _chunks(n: int) -> list[tuple[int, int]]:
    """``(chunk index, paths used)`` for ``n`` paths."""
    if n < 1:
        raise ValueError("n must be >= 1")
    full, rest = divmod(n, CHUNK)
    out = [(c, CHUNK) for c in range(full)]
    if rest:
        out.append((full, rest))
    return out


def _map_chunks(fn, n: int, workers: int | None):
    jobs = _chunks(n)
    workers = _default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(jobs) == 1:
        return [fn(c, k) for c, k in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _summarise(samples: np.ndarray, method: str, t_grid) -> list[SurvivalEstimate]:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1) if n > 1 else np.zeros(samples.shape[1])
    # a constant column has no spread; keep rounding noise out of it
    sd[np.ptp(samples, axis=0) == 0] = 0.0
    se = sd / math.sqrt(n)
    return [SurvivalEstimate(float(m), float(s), n, method, float(t))
            for m, s, t in zip(mean, se, t_grid)]


def _t_grid(t) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(t, dtype=float))
    if grid.ndim != 1 or grid.size == 0 or grid[0] <= 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("t must be positive and strictly increasing")
    return grid


def a_F(F, beta: float, spec: EnvironmentSpec, t, n: int, seed: int,
        tilt: float = 0.0, workers: int | None = None) -> list[SurvivalEstimate]:
    """``a_F`` on a grid of times, one path set shared by the whole grid.

    With ``tilt > 0`` the paths follow the Esscher-tilted environment.
    """
    grid = _t_grid(t)
    if tilt < 0:
        raise ValueError("tilt must be >= 0")
    sample_spec = esscher_spec(spec, tilt)
    log_norm = grid * phi_K(spec, tilt) if tilt else None
    horizon = float(grid[-1])

    def run(chunk: int, used: int) -> np.ndarray:
        batch, _ = sample_chunk(sample_spec, horizon, seed, chunk)
        batch = batch.head(used)
        J, kv = batch.functionals(beta, grid)
        vals = F(J)
        if tilt:
            vals = vals * np.exp(log_norm[None, :] - tilt * kv)
        return vals

    samples = np.concatenate(_map_chunks(run, n, workers), axis=0)
    method = "plain" if tilt == 0 else f"esscher({tilt:.17g})"
    return _summarise(samples, method, grid)


def a_F_plain(F, beta, spec, t, n, seed, workers=None) -> SurvivalEstimate:
    if n < 2:
        raise ValueError("n must be >= 2")
    return a_F(F, beta, spec, [t], n, seed, 0.0, workers)[0]


def a_F_esscher(F, beta, spec, t, tilt_lambda, n, seed, workers=None) -> SurvivalEstimate:
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (0 <= tilt_lambda < spec.theta_max):
        raise ValueError(f"tilt {tilt_lambda} is outside [0, theta_max={spec.theta_max})")
    return a_F(F, beta, spec, [t], n, seed, tilt_lambda, workers)[0]


def auto_tilt(spec: EnvironmentSpec, g: float, beta: float = 1.0) -> float:
    """Tilt matching the regime: 1 (strong, intermediate), tau (weak), 0 otherwise."""
    rep = classify(spec, g, beta)
    if rep.label in ("StronglySubcritical", "IntermediateSubcritical"):
        return 1.0
    if rep.label == "WeaklySubcritical":
        return float(rep.tau)
    return 0.0


def parse_method(method: str, spec: EnvironmentSpec, g: float, beta: float = 1.0):
    """``(kind, tilt)`` from ``plain``, ``esscher:LAMBDA``, ``esscher:auto`` or ``feller_exact``."""
    if method == "plain":
        return "plain", 0.0
    if method == "feller_exact":
        return "feller_exact", 0.0
    if method.startswith("esscher:"):
        arg = method.split(":", 1)[1]
        lam = auto_tilt(spec, g, beta) if arg == "auto" else float(arg)
        return "esscher", lam
    raise ValueError(f"unknown method {method!r}; expected plain, esscher:LAMBDA, "
                     "esscher:auto or feller_exact")


def annealed_survival_grid(mech: StableMechanism, x0: float, spec: EnvironmentSpec, t,
                           n: int, method: str = "plain", seed: int = 0,
                           workers: int | None = None) -> list[SurvivalEstimate]:
    """``P(Y_t > 0)`` on a grid of times; the environment drift is ``mech.g``."""
    if not isinstance(mech, StableMechanism):
        raise UnsupportedMechanism("annealed survival needs a stable mechanism")
    env = spec.with_drift(mech.g)
    kind, tilt = parse_method(method, env, mech.g, mech.beta)
    grid = _t_grid(t)
    if kind == "feller_exact":
        return _feller_exact_survival(mech, x0, env, grid, n, seed, workers)
    F = SurvivalForm(x0, mech.c_plus, mech.beta)
    return a_F(F, mech.beta, env, grid, n, seed, tilt, workers)


def annealed_survival(mech: StableMechanism, x0: float, spec: EnvironmentSpec, t: float,
                      n: int, method: str = "plain", seed: int = 0,
                      workers: int | None = None) -> SurvivalEstimate:
    return annealed_survival_grid(mech, x0, spec, [t], n, method, seed, workers)[0]


def _feller_runs(mech: StableMechanism, x0: float, env: EnvironmentSpec, grid: np.ndarray,
                 n: int, seed: int, workers: int | None):
    """Exact ``Y`` and ``K`` on ``grid`` for ``n`` (environment, branching) pairs."""
    if mech.beta != 1.0:
        raise UnsupportedMechanism("simulating Y needs beta = 1")
    horizon = float(grid[-1])

    def run(chunk: int, used: int):
        batch, rng = sample_chunk(env, horizon, seed, chunk)
        y, kv = sample_feller_batch(mech, x0, grid, batch, rng)
        return y[:used], kv[:used]

    parts = _map_chunks(run, n, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _feller_exact_survival(mech, x0, env, grid, n, seed, workers):
    y, _ = _feller_runs(mech, x0, env, grid, n, seed, workers)
    return _summarise((y > 0).astype(float), "feller_exact", grid)


# --- statistical checks -----------------------------------------------------

@dataclass(frozen=True)
class CltReport:
    ks: float
    pvalue: float
    n_survivors: int
    m_hat: float
    rho: float


def clt_check(mech: StableMechanism, x0: float, spec: EnvironmentSpec, t: float, n: int,
              seed: int, workers: int | None = None, min_survivors: int = 500) -> CltReport:
    """KS distance of ``(log Y_t - m t) / (rho sqrt t)`` given ``Y_t > 0`` to N(0, 1).

    ``m = g + int log m nu(dm)`` and ``rho**2 = int (log m)**2 nu(dm)``.
    """
    env = spec.with_drift(mech.g)
    if classify(env, mech.g, mech.beta).label != "Supercritical":
        raise ValueError("clt_check needs a supercritical environment")
    rho2 = env.log_sq_integral()
    if not (math.isfinite(rho2) and rho2 > 0):
        raise ValueError("clt_check needs 0 < int (log m)^2 nu(dm) < inf")
    y, _ = _feller_runs(mech, x0, env, np.array([float(t)]), n, seed, workers)
    alive = y[:, 0][y[:, 0] > 0]
    if alive.size < min_survivors:
        raise ValueError(f"only {alive.size} survivors (< {min_survivors}); increase n or t")
    m_hat = mech.g + env.mean_log_jump()
    rho = math.sqrt(rho2)
    z = (np.log(alive) - m_hat * t) / (rho * math.sqrt(t))
    res = stats.kstest(z, "norm")
    return CltReport(float(res.statistic), float(res.pvalue), int(alive.size), m_hat, rho)


@dataclass(frozen=True)
class MartingaleReport:
    t: float
    mean_Z: float          # mean of Y_t exp(-K_t), target x0
    se_Z: float
    mean_Y: float          # mean of Y_t, target x0 exp(t phi_K(1))
    se_Y: float
    target_Y: float
    x0: float

    @property
    def z_ok(self) -> bool:
        return abs(self.mean_Z - self.x0) <= 3 * self.se_Z

    @property
    def y_ok(self) -> bool:
        return abs(self.mean_Y - self.target_Y) <= 3 * self.se_Y


def martingale_check(mech: StableMechanism, x0: float, spec: EnvironmentSpec, t: float,
                     n: int, seed: int, workers: int | None = None) -> MartingaleReport:
    env = spec.with_drift(mech.g)
    target = x0 * math.exp(t * phi_K(env, 1.0))
    if t == 0:
        return MartingaleReport(0.0, x0, 0.0, x0, 0.0, x0, x0)
    y, kv = _feller_runs(mech, x0, env, np.array([float(t)]), n, seed, workers)
    y = y[:, 0]
    z = y * np.exp(-kv[:, 0])
    rt = math.sqrt(n)
    return MartingaleReport(float(t), float(z.mean()), float(z.std(ddof=1) / rt),
                            float(y.mean()), float(y.std(ddof=1) / rt), target, x0)


@dataclass(frozen=True)
class WLimitReport:
    t: float
    p_positive: float       # fraction with Y_t > 0
    p_positive_se: float
    mean_W: float           # mean of Y_t exp(-K_t)
    mean_W_se: float
    p_absorb: float         # mean over environments of exp(-x0 / (c_plus J_t))
    p_absorb_se: float


def w_limit_estimate(mech: StableMechanism, x0: float, spec: EnvironmentSpec, t_large: float,
                     n: int, seed: int, workers: int | None = None) -> WLimitReport:
    """Empirical law of ``exp(-K_t) Y_t`` at a large time, with the absorption oracle."""
    env = spec.with_drift(mech.g)
    grid = np.array([float(t_large)])
    y, kv = _feller_runs(mech, x0, env, grid, n, seed, workers)
    y = y[:, 0]
    w = y * np.exp(-kv[:, 0])
    pos = (y > 0).astype(float)

    def run(chunk: int, used: int):
        batch, _ = sample_chunk(env, float(t_large), seed, chunk)
        J, _ = batch.head(used).functionals(1.0, grid)
        return 1.0 - survival_from_J(mech.c_plus * J[:, 0], x0, 1.0)

    absorb = np.concatenate(_map_chunks(run, n, workers))
    rt = math.sqrt(n)
    return WLimitReport(float(t_large), float(pos.mean()), float(pos.std(ddof=1) / rt),
                        float(w.mean()), float(w.std(ddof=1) / rt),
                        float(absorb.mean()), float(absorb.std(ddof=1) / rt))


def _atoms_only(spec: EnvironmentSpec) -> tuple[Atom, ...]:
    if spec.components:
        raise ValueError("sandwich_means needs an environment made of atoms only")
    return spec.atoms


def sandwich_means(spec: EnvironmentSpec, beta: float, t: float, qs, n: int, seed: int,
                   workers: int | None = None) -> list[dict]:
    """Means of the discretised lower and upper bounds on ``int_0^t exp(-beta K_s) ds``.

    For each ``q`` with ``p = floor(q t)``:

        lower = E[exp(-beta(|g|/q + up_{1/q}))] * E[A_{p-1,q}] / q
        upper = E[exp( beta(|g|/q + down_{1/q}))] * E[A_{p,q}] / q

    where ``up``/``down`` are the summed positive/negative log-jumps; their
    exponential moments are evaluated in closed form.
    """
    atoms = _atoms_only(spec)
    g = spec.drift
    up = sum(a.rate * (a.m ** -beta - 1.0) for a in atoms if a.m > 1)
    down = sum(a.rate * (a.m ** -beta - 1.0) for a in atoms if a.m < 1)
    qs = [int(q) for q in qs]
    grid = np.array([float(t)])

    def run(chunk: int, used: int):
        batch, _ = sample_chunk(spec, float(t), seed, chunk)
        batch = batch.head(used)
        J, _ = batch.functionals(beta, grid)
        cols = [J[:, 0]]
        for q in qs:
            p = int(math.floor(q * t))
            cols.append(_riemann(batch, beta, q, p - 1))
            cols.append(_riemann(batch, beta, q, p))
        return np.column_stack(cols)

    data = np.concatenate(_map_chunks(run, n, workers), axis=0)
    rt = math.sqrt(data.shape[0])
    exact = float(data[:, 0].mean())
    exact_se = float(data[:, 0].std(ddof=1) / rt)
    out = []
    for k, q in enumerate(qs):
        a_lo, a_hi = data[:, 1 + 2 * k], data[:, 2 + 2 * k]
        f_lo = math.exp(-beta * abs(g) / q + up / q)
        f_hi = math.exp(beta * abs(g) / q + down / q)
        out.append({"q": q, "lower": f_lo * float(a_lo.mean()) / q,
                    "lower_se": f_lo * float(a_lo.std(ddof=1)) / (q * rt),
                    "exact": exact, "exact_se": exact_se,
                    "upper": f_hi * float(a_hi.mean()) / q,
                    "upper_se": f_hi * float(a_hi.std(ddof=1)) / (q * rt)})
    return out


def _riemann(batch: PathBatch, beta: float, q: int, p: int) -> np.ndarray:
    return kernels.riemann_sums(batch.offsets, batch.times, batch.log_multipliers,
                                batch.drift, beta, q, p)
