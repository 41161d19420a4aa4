"""Bounded-variation catastrophe environment ``K_t = g t + Delta_t``.

``Delta`` is a compound Poisson process of log-multipliers.  Its Levy
measure ``nu`` on the multipliers ``m`` is a finite sum of atoms and
density components (beta, lognormal, Pareto, or a tabulated density
produced by :func:`truncate`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from . import kernels

__all__ = [
    "DomainError",
    "Atom",
    "BetaComponent",
    "LogNormalComponent",
    "ParetoComponent",
    "TabulatedComponent",
    "EnvironmentSpec",
    "JumpPath",
    "PathBatch",
    "LevyDensity",
    "phi",
    "phi_prime",
    "phi_K",
    "phi_K_prime",
    "theta_max",
    "sample_path",
    "sample_paths",
    "esscher_spec",
    "exp_functional",
    "discretized_functional",
    "truncate",
    "CHUNK",
    "chunk_rng",
]

# paths are generated in fixed-size chunks, each with its own counter-derived
# stream, so path i does not depend on n or on the number of workers
CHUNK = 4096


class DomainError(ValueError):
    """Raised when a Laplace-exponent argument is outside [0, theta_max)."""


@dataclass(frozen=True)
class Atom:
    """Point mass of ``nu`` at multiplier ``m`` with jump rate ``rate``."""

    m: float
    rate: float

    def __post_init__(self):
        if not (self.m > 0):
            raise ValueError(f"multiplier must be positive, got {self.m}")
        if self.m == 1.0:
            raise ValueError("an atom at m=1 produces no jump")
        if not (self.rate > 0) or not math.isfinite(self.rate):
            raise ValueError(f"atom rate must be positive and finite, got {self.rate}")


class _Component:
    """Density part of ``nu``: ``rate`` times a probability law of ``M``."""

    rate: float
    theta_max: float = math.inf

    def moment(self, lam: float) -> float:
        """E[M**lam]."""
        raise NotImplementedError

    def dmoment(self, lam: float) -> float:
        """E[M**lam * log M]."""
        raise NotImplementedError

    def log_sq_moment(self) -> float:
        """E[(log M)**2]."""
        raise NotImplementedError

    def sample_log(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def tilt(self, lam: float) -> "_Component":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class BetaComponent(_Component):
    """``M ~ Beta(a, b)`` on (0, 1)."""

    a: float
    b: float
    rate: float
    theta_max: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.rate > 0):
            raise ValueError("beta component needs a, b, rate > 0")

    def moment(self, lam):
        return math.exp(special.gammaln(self.a + lam) - special.gammaln(self.a)
                        + special.gammaln(self.a + self.b)
                        - special.gammaln(self.a + self.b + lam))

    def dmoment(self, lam):
        return self.moment(lam) * (special.digamma(self.a + lam)
                                   - special.digamma(self.a + self.b + lam))

    def log_sq_moment(self):
        mean = special.digamma(self.a) - special.digamma(self.a + self.b)
        var = special.polygamma(1, self.a) - special.polygamma(1, self.a + self.b)
        return float(var + mean * mean)

    def sample_log(self, rng, size):
        return np.log(rng.beta(self.a, self.b, size))

    def tilt(self, lam):
        return BetaComponent(self.a + lam, self.b, self.rate * self.moment(lam))

    def to_dict(self):
        return {"family": "beta", "params": {"a": self.a, "b": self.b}, "rate": self.rate}


@dataclass(frozen=True)
class LogNormalComponent(_Component):
    """``log M ~ Normal(mu, sigma**2)``."""

    mu: float
    sigma: float
    rate: float
    theta_max: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if not (self.sigma > 0 and self.rate > 0):
            raise ValueError("lognormal component needs sigma, rate > 0")

    def moment(self, lam):
        return math.exp(lam * self.mu + 0.5 * lam * lam * self.sigma ** 2)

    def dmoment(self, lam):
        return self.moment(lam) * (self.mu + lam * self.sigma ** 2)

    def log_sq_moment(self):
        return self.mu ** 2 + self.sigma ** 2

    def sample_log(self, rng, size):
        return rng.normal(self.mu, self.sigma, size)

    def tilt(self, lam):
        return LogNormalComponent(self.mu + lam * self.sigma ** 2, self.sigma,
                                  self.rate * self.moment(lam))

    def to_dict(self):
        return {"family": "lognormal", "params": {"mu": self.mu, "sigma": self.sigma},
                "rate": self.rate}


@dataclass(frozen=True)
class ParetoComponent(_Component):
    """``M`` Pareto on (1, inf) with tail index ``alpha``: ``log M ~ Exp(alpha)``."""

    alpha: float
    rate: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.rate > 0):
            raise ValueError("pareto component needs alpha, rate > 0")

    @property
    def theta_max(self):
        return self.alpha

    def moment(self, lam):
        if lam >= self.alpha:
            return math.inf
        return self.alpha / (self.alpha - lam)

    def dmoment(self, lam):
        if lam >= self.alpha:
            return math.inf
        return self.alpha / (self.alpha - lam) ** 2

    def log_sq_moment(self):
        return 2.0 / self.alpha ** 2

    def sample_log(self, rng, size):
        return rng.exponential(1.0 / self.alpha, size)

    def tilt(self, lam):
        return ParetoComponent(self.alpha - lam, self.rate * self.moment(lam))

    def to_dict(self):
        return {"family": "pareto", "params": {"alpha": self.alpha}, "rate": self.rate}


@dataclass(frozen=True, eq=False)
class TabulatedComponent(_Component):
    """Finite-mass restriction of a Levy density to a union of intervals.

    Moments use adaptive quadrature.  Sampling inverts a tabulated CDF
    (piecewise linear within cells of a fine grid), which is approximate at
    the grid resolution.
    """

    density: Callable[[float], float]
    pieces: tuple
    theta_max: float = math.inf
    tilt_power: float = 0.0

    def _weighted(self, fn) -> float:
        total = 0.0
        for lo, hi in self.pieces:
            val, _ = integrate.quad(lambda m: self._dens(m) * fn(m), lo, hi,
                                    limit=200, epsabs=0.0, epsrel=1e-11)
            total += val
        return total

    def _dens(self, m):
        return self.density(m) * (m ** self.tilt_power if self.tilt_power else 1.0)

    @cached_property
    def rate(self) -> float:
        total = 0.0
        for lo, hi in self.pieces:
            out = integrate.quad(self._dens, lo, hi, limit=200, epsabs=0.0,
                                 epsrel=1e-11, full_output=1)
            # ier != 0 (4-tuple) means quad could not converge: treat as divergent
            if len(out) > 3 or not math.isfinite(out[0]):
                return math.inf
            total += out[0]
        return total

    def moment(self, lam):
        if lam >= self.theta_max:
            return math.inf
        return self._weighted(lambda m: m ** lam) / self.rate

    def dmoment(self, lam):
        return self._weighted(lambda m: m ** lam * math.log(m)) / self.rate

    def log_sq_moment(self):
        return self._weighted(lambda m: math.log(m) ** 2) / self.rate

    @cached_property
    def _table(self):
        xs, cdf = [], []
        acc = 0.0
        nodes, weights = np.polynomial.legendre.leggauss(8)
        for lo, hi in self.pieces:
            if not math.isfinite(hi):
                raise ValueError("sampling a tabulated component needs bounded support")
            edges = np.linspace(lo, hi, 4097)
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            pts = mid[:, None] + half[:, None] * nodes[None, :]
            vals = np.vectorize(self._dens)(pts)
            mass = (vals * weights[None, :]).sum(axis=1) * half
            c = acc + np.concatenate(([0.0], np.cumsum(mass)))
            xs.append(edges)
            cdf.append(c)
            acc = c[-1]
        return np.concatenate(xs), np.concatenate(cdf) / acc

    def sample_log(self, rng, size):
        xs, cdf = self._table
        u = rng.uniform(0.0, 1.0, size)
        return np.log(np.interp(u, cdf, xs))

    def tilt(self, lam):
        return TabulatedComponent(self.density, self.pieces, self.theta_max - lam,
                                  self.tilt_power + lam)

    def to_dict(self):
        return {"family": "tabulated", "pieces": [list(p) for p in self.pieces],
                "rate": self.rate}


_FAMILIES = {
    "beta": lambda p, rate: BetaComponent(float(p["a"]), float(p["b"]), rate),
    "uniform": lambda p, rate: BetaComponent(1.0, 1.0, rate),
    "lognormal": lambda p, rate: LogNormalComponent(float(p["mu"]), float(p["sigma"]), rate),
    "pareto": lambda p, rate: ParetoComponent(float(p["alpha"]), rate),
}


def make_component(family: str, params: dict, rate: float) -> _Component:
    try:
        build = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown component family {family!r}; "
                         f"expected one of {sorted(_FAMILIES)}") from None
    return build(params or {}, float(rate))


@dataclass(frozen=True)
class EnvironmentSpec:
    """Drift ``g`` plus a finite-activity catastrophe measure ``nu``.

    An empty ``nu`` is accepted and gives the deterministic environment
    ``K_t = g t``.
    """

    drift: float = 0.0
    atoms: tuple = ()
    components: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "components", tuple(self.components))
        for a in self.atoms:
            if not isinstance(a, Atom):
                raise TypeError("atoms must be Atom instances")
        if not math.isfinite(self.total_rate):
            raise ValueError("total jump rate must be finite")

    @property
    def total_rate(self) -> float:
        return sum(a.rate for a in self.atoms) + sum(c.rate for c in self.components)

    @cached_property
    def theta_max(self) -> float:
        return min((c.theta_max for c in self.components), default=math.inf)

    def with_drift(self, drift: float) -> "EnvironmentSpec":
        return replace(self, drift=float(drift))

    def mean_log_jump(self) -> float:
        """phi'(0) = integral of log m against nu."""
        return (sum(a.rate * math.log(a.m) for a in self.atoms)
                + sum(c.rate * c.dmoment(0.0) for c in self.components))

    def log_sq_integral(self) -> float:
        """Integral of (log m)**2 against nu."""
        return (sum(a.rate * math.log(a.m) ** 2 for a in self.atoms)
                + sum(c.rate * c.log_sq_moment() for c in self.components))

    def sample_log_jumps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        parts = list(self.atoms) + list(self.components)
        if size == 0:
            return np.empty(0)
        rates = np.array([p.rate for p in parts])
        which = rng.choice(len(parts), size=size, p=rates / rates.sum())
        out = np.empty(size)
        for k, part in enumerate(parts):
            sel = which == k
            cnt = int(sel.sum())
            if isinstance(part, Atom):
                out[sel] = math.log(part.m)
            elif cnt:
                out[sel] = part.sample_log(rng, cnt)
        return out

    def to_dict(self) -> dict:
        return {
            "drift": self.drift,
            "atoms": [{"m": a.m, "rate": a.rate} for a in self.atoms],
            "components": [c.to_dict() for c in self.components],
        }


def theta_max(spec: EnvironmentSpec) -> float:
    return spec.theta_max


def _check_domain(spec: EnvironmentSpec, lam: float) -> None:
    if not (lam >= 0):
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if lam >= spec.theta_max:
        raise DomainError(f"lambda={lam} is outside [0, theta_max) with theta_max={spec.theta_max}")


def phi(spec: EnvironmentSpec, lam: float) -> float:
    """Log moment generating function of ``Delta_1`` at ``lam``."""
    _check_domain(spec, lam)
    if lam == 0:
        return 0.0
    total = sum(a.rate * math.expm1(lam * math.log(a.m)) for a in spec.atoms)
    total += sum(c.rate * (c.moment(lam) - 1.0) for c in spec.components)
    return total


def phi_prime(spec: EnvironmentSpec, lam: float) -> float:
    _check_domain(spec, lam)
    total = sum(a.rate * a.m ** lam * math.log(a.m) for a in spec.atoms)
    total += sum(c.rate * c.dmoment(lam) for c in spec.components)
    return total


def phi_K(spec: EnvironmentSpec, lam: float) -> float:
    """Laplace exponent of ``K``: ``g*lam + phi(lam)``."""
    return spec.drift * lam + phi(spec, lam)


def phi_K_prime(spec: EnvironmentSpec, lam: float) -> float:
    return spec.drift + phi_prime(spec, lam)


def esscher_spec(spec: EnvironmentSpec, lam: float) -> EnvironmentSpec:
    """Environment whose paths have the law tilted by ``exp(lam*K_t - t*phi_K(lam))``."""
    _check_domain(spec, lam)
    if lam == 0:
        return spec
    atoms = tuple(Atom(a.m, a.rate * a.m ** lam) for a in spec.atoms)
    comps = tuple(c.tilt(lam) for c in spec.components)
    return EnvironmentSpec(spec.drift, atoms, comps)


# --- paths ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JumpPath:
    """One realised environment on ``[0, horizon]``."""

    horizon: float
    times: np.ndarray
    log_multipliers: np.ndarray
    drift: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        logm = np.asarray(self.log_multipliers, dtype=float)
        if times.shape != logm.shape or times.ndim != 1:
            raise ValueError("times and log_multipliers must be 1-d and equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0
                           or times[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing within (0, horizon]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "log_multipliers", logm)

    @classmethod
    def from_jumps(cls, horizon, jumps: Sequence[tuple], drift=0.0) -> "JumpPath":
        """Build from ``[(time, multiplier), ...]``."""
        t = [float(a) for a, _ in jumps]
        x = [math.log(b) for _, b in jumps]
        return cls(float(horizon), np.array(t), np.array(x), float(drift))

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def K(self, t):
        """Right-continuous ``K_t`` at scalar or array ``t``."""
        t_arr = np.asarray(t, dtype=float)
        cs = np.concatenate(([0.0], np.cumsum(self.log_multipliers)))
        idx = np.searchsorted(self.times, t_arr, side="right")
        out = self.drift * t_arr + cs[idx]
        return float(out) if out.ndim == 0 else out

    def jump_sums(self) -> np.ndarray:
        """Cumulative log-jump after each jump (0 before the first)."""
        return np.concatenate(([0.0], np.cumsum(self.log_multipliers)))

    def without_small_jumps(self, eps1: float, eps2: float) -> "JumpPath":
        """Delete jumps with multiplier in [1-eps1, 1+eps2]."""
        m = np.exp(self.log_multipliers)
        keep = (m < 1.0 - eps1) | (m > 1.0 + eps2)
        return JumpPath(self.horizon, self.times[keep], self.log_multipliers[keep], self.drift)

    def to_rows(self):
        return list(zip(self.times.tolist(), self.log_multipliers.tolist()))

    def as_batch(self) -> "PathBatch":
        return PathBatch(np.array([0, self.n_jumps]), self.times, self.log_multipliers,
                         self.drift, self.horizon)


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Many paths in CSR layout: path ``i`` owns ``offsets[i]:offsets[i+1]``."""

    offsets: np.ndarray
    times: np.ndarray
    log_multipliers: np.ndarray
    drift: float
    horizon: float

    def __len__(self):
        return len(self.offsets) - 1

    def path(self, i: int) -> JumpPath:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return JumpPath(self.horizon, self.times[lo:hi], self.log_multipliers[lo:hi], self.drift)

    def head(self, n: int) -> "PathBatch":
        end = self.offsets[n]
        return PathBatch(self.offsets[: n + 1], self.times[:end],
                         self.log_multipliers[:end], self.drift, self.horizon)

    def functionals(self, beta: float, grid) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``J(t) = int_0^t exp(-beta K_s) ds`` and ``K_t`` on ``grid``.

        ``grid`` must be increasing and within ``(0, horizon]``.
        """
        grid = np.asarray(grid, dtype=float)
        inc, kv = kernels.grid_functionals(self.offsets, self.times, self.log_multipliers,
                                           self.drift, beta, grid)
        kstart = np.concatenate((np.zeros((len(self), 1)), kv[:, :-1]), axis=1)
        J = np.cumsum(np.exp(-beta * kstart) * inc, axis=1)
        return J, kv

    def increments(self, beta: float, grid) -> tuple[np.ndarray, np.ndarray]:
        """Per-interval functionals relative to the interval start, and ``K`` on grid."""
        return kernels.grid_functionals(self.offsets, self.times, self.log_multipliers,
                                        self.drift, beta, np.asarray(grid, dtype=float))

    @staticmethod
    def concat(batches: Sequence["PathBatch"]) -> "PathBatch":
        offs = [np.array([0])]
        shift = 0
        for b in batches:
            offs.append(b.offsets[1:] + shift)
            shift += int(b.offsets[-1])
        return PathBatch(np.concatenate(offs), np.concatenate([b.times for b in batches]),
                         np.concatenate([b.log_multipliers for b in batches]),
                         batches[0].drift, batches[0].horizon)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Generator for chunk ``chunk`` of the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),)))


def _sample_batch(spec: EnvironmentSpec, horizon: float, n: int,
                  rng: np.random.Generator) -> PathBatch:
    lam_tot = spec.total_rate
    if lam_tot > 0:
        counts = rng.poisson(lam_tot * horizon, size=n)
    else:
        counts = np.zeros(n, dtype=np.int64)
    total = int(counts.sum())
    owner = np.repeat(np.arange(n), counts)
    times = rng.uniform(0.0, horizon, size=total)
    order = np.lexsort((times, owner))
    times = times[order]
    logm = spec.sample_log_jumps(rng, total)
    offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return PathBatch(offsets, times, logm, spec.drift, float(horizon))


def sample_path(spec: EnvironmentSpec, horizon: float, seed) -> JumpPath:
    """Single path; ``seed`` is an int or a ``numpy.random.Generator``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _sample_batch(spec, horizon, 1, rng).path(0)


def sample_chunk(spec: EnvironmentSpec, horizon: float, seed: int, chunk: int,
                 rng: np.random.Generator | None = None) -> tuple[PathBatch, np.random.Generator]:
    """Chunk ``chunk`` of ``CHUNK`` paths, plus its generator for further draws."""
    rng = chunk_rng(seed, chunk) if rng is None else rng
    return _sample_batch(spec, horizon, CHUNK, rng), rng


def sample_paths(spec: EnvironmentSpec, horizon: float, n: int, seed: int) -> PathBatch:
    """``n`` paths; path ``i`` is identical for any ``n > i``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    nchunks = -(-n // CHUNK)
    batches = [sample_chunk(spec, horizon, seed, c)[0] for c in range(nchunks)]
    return PathBatch.concat(batches).head(n)


# --- functionals ----------------------------------------------------------

def exp_functional(path: JumpPath, beta: float, t: float) -> float:
    """Exact ``int_0^t exp(-beta*K_s) ds`` summed segment by segment."""
    if t > path.horizon * (1 + 1e-12):
        raise ValueError(f"t={t} exceeds the path horizon {path.horizon}")
    if t <= 0:
        return 0.0
    inc, _ = kernels.grid_functionals(np.array([0, path.n_jumps]), path.times,
                                      path.log_multipliers, path.drift, beta,
                                      np.array([float(t)]))
    return float(inc[0, 0])


def _window_extrema(path: JumpPath, a: np.ndarray, b: np.ndarray):
    """Max and min of K over each window [a_i, b_i] (K affine between jumps)."""
    kmax = np.maximum(path.K(a), path.K(b) - _jump_at(path, b))
    kmin = np.minimum(path.K(a), path.K(b) - _jump_at(path, b))
    for tj, xj in zip(path.times, path.log_multipliers):
        inside = (tj > a) & (tj <= b)
        if not inside.any():
            continue
        after = path.K(tj)
        before = after - xj
        kmax = np.where(inside, np.maximum(kmax, max(before, after)), kmax)
        kmin = np.where(inside, np.minimum(kmin, min(before, after)), kmin)
    return kmax, kmin


def _jump_at(path: JumpPath, t: np.ndarray) -> np.ndarray:
    """Size of the jump exactly at t (0 almost everywhere)."""
    idx = np.searchsorted(path.times, t, side="left")
    out = np.zeros_like(t, dtype=float)
    hit = idx < path.n_jumps
    hit[hit] = path.times[idx[hit]] == t[hit]
    out[hit] = path.log_multipliers[idx[hit]]
    return out


def discretized_functional(path: JumpPath, beta: float, p: int, q: int):
    """Riemann sum ``A_pq = sum_{i=0}^{p} exp(-beta*K_{i/q})`` with pathwise bounds.

    ``lower``/``upper`` bracket the exact functional over ``[0, p/q]`` using
    the extrema of ``K`` on each window ``[i/q, (i+1)/q]``.
    """
    if p < 0 or q < 1:
        raise ValueError("need p >= 0 and q >= 1")
    if p / q > path.horizon * (1 + 1e-12):
        raise ValueError(f"p/q={p / q} exceeds the path horizon {path.horizon}")
    grid = np.arange(p + 1) / q
    a_pq = float(np.exp(-beta * path.K(grid)).sum())
    if p == 0:
        return a_pq, 0.0, 0.0
    kmax, kmin = _window_extrema(path, grid[:-1], grid[1:])
    lower = float(np.exp(-beta * kmax).sum() / q)
    upper = float(np.exp(-beta * kmin).sum() / q)
    return a_pq, lower, upper


# --- truncation of infinite-activity measures -------------------------------

@dataclass(frozen=True, eq=False)
class LevyDensity:
    """Levy density of ``nu`` on ``(lower, upper)``, possibly non-integrable at 1."""

    density: Callable[[float], float]
    lower: float = 0.0
    upper: float = math.inf
    theta_max: float = math.inf


def truncate(nu: LevyDensity, eps1: float, eps2: float, drift: float = 0.0,
             atoms: Sequence[Atom] = ()) -> EnvironmentSpec:
    """Restrict ``nu`` to ``(0, 1-eps1) U (1+eps2, inf)`` as a finite-activity spec.

    ``atoms`` (finite ``nu`` part) are kept when outside the removed band.
    """
    if not (0 < eps1 < 1) or not eps2 > 0:
        raise ValueError("need 0 < eps1 < 1 and eps2 > 0")
    pieces = []
    lo_hi = (nu.lower, min(nu.upper, 1.0 - eps1))
    if lo_hi[1] > lo_hi[0]:
        pieces.append(lo_hi)
    hi_lo = (max(nu.lower, 1.0 + eps2), nu.upper)
    if hi_lo[1] > hi_lo[0]:
        pieces.append(hi_lo)
    kept = tuple(a for a in atoms if a.m < 1.0 - eps1 or a.m > 1.0 + eps2)
    comps: tuple = ()
    if pieces:
        comp = TabulatedComponent(nu.density, tuple(pieces), nu.theta_max)
        rate = comp.rate
        if not math.isfinite(rate):
            raise ValueError("truncated measure has infinite (or non-integrable) mass")
        if rate > 0:
            comps = (comp,)
    return EnvironmentSpec(drift, kept, comps)
