import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from csbpcat.env import (Atom, BetaComponent, DomainError, EnvironmentSpec, JumpPath,
                         LevyDensity, ParetoComponent, discretized_functional, esscher_spec,
                         exp_functional, phi, phi_K, phi_K_prime, phi_prime, sample_path,
                         sample_paths, truncate)

HALF = EnvironmentSpec(0.0, (Atom(0.5, 1.0),))


def quad_functional(path, beta, t):
    """Independent oracle: adaptive quadrature of exp(-beta K_s) between jumps."""
    pts = [0.0] + [s for s in path.times if s < t] + [t]
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        mid = 0.5 * (a + b)
        base = path.K(mid) - path.drift * mid
        val, _ = integrate.quad(lambda s: math.exp(-beta * (path.drift * s + base)), a, b,
                                epsabs=0, epsrel=1e-13)
        total += val
    return total


def test_phi_examples():
    assert phi(HALF, 0.0) == 0.0
    assert phi(HALF, 1.0) == pytest.approx(-0.5, abs=1e-15)
    two = EnvironmentSpec(0.0, (Atom(0.5, 1.0), Atom(2.0, 1.0)))
    assert phi(two, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_phi_K_examples():
    assert phi_K(HALF.with_drift(0.5), 1.0) == pytest.approx(0.0, abs=1e-15)
    assert phi_K(HALF.with_drift(0.1), 1.0) == pytest.approx(-0.4, abs=1e-15)
    assert phi_K(HALF.with_drift(0.3), 0.0) == 0.0


def test_phi_prime_matches_finite_difference():
    spec = EnvironmentSpec(0.2, (Atom(0.5, 1.0), Atom(1.7, 0.3)), (BetaComponent(2.0, 3.0, 0.7),))
    for lam in (0.2, 0.7, 1.5):
        h = 1e-6
        fd = (phi(spec, lam + h) - phi(spec, lam - h)) / (2 * h)
        assert phi_prime(spec, lam) == pytest.approx(fd, rel=1e-7)
        assert phi_K_prime(spec, lam) == pytest.approx(0.2 + fd, rel=1e-7)


def test_domain_error_names_theta_max():
    spec = EnvironmentSpec(0.0, (), (ParetoComponent(2.5, 1.0),))
    assert spec.theta_max == 2.5
    with pytest.raises(DomainError, match="theta_max=2.5"):
        phi(spec, 2.5)
    with pytest.raises(DomainError):
        phi(spec, -0.1)


def test_atom_validation():
    with pytest.raises(ValueError):
        Atom(1.0, 1.0)
    with pytest.raises(ValueError):
        Atom(-0.5, 1.0)
    with pytest.raises(ValueError):
        Atom(0.5, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 3.0).filter(lambda m: abs(m - 1) > 1e-3),
                          st.floats(0.05, 3.0)), min_size=1, max_size=4),
       st.floats(0.0, 2.0), st.floats(0.01, 2.0))
def test_phi_convex_midpoint(atoms, a, width):
    spec = EnvironmentSpec(0.0, tuple(Atom(m, r) for m, r in atoms))
    c = a + width
    mid = 0.5 * (a + c)
    assert 2 * phi(spec, mid) <= phi(spec, a) + phi(spec, c) + 1e-12 * (1 + abs(phi(spec, c)))


def test_sample_path_structure():
    spec = EnvironmentSpec(0.3, (Atom(0.5, 1.0),))
    for seed in range(5):
        p = sample_path(spec, 10.0, seed)
        assert p.K(10.0) == pytest.approx(3.0 - p.n_jumps * math.log(2), abs=1e-12)
        assert np.all(np.diff(p.times) > 0)


def test_sample_path_deterministic():
    spec = EnvironmentSpec(0.3, (Atom(0.5, 1.0), Atom(2.0, 0.5)))
    a, b = sample_path(spec, 5.0, 42), sample_path(spec, 5.0, 42)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.log_multipliers, b.log_multipliers)


def test_paths_independent_of_n():
    spec = EnvironmentSpec(0.0, (Atom(0.5, 1.0),))
    small = sample_paths(spec, 3.0, 10, 7)
    big = sample_paths(spec, 3.0, 5000, 7)
    for i in range(10):
        assert np.array_equal(small.path(i).times, big.path(i).times)


def test_mean_jump_count():
    batch = sample_paths(HALF, 10.0, 10_000, 3)
    counts = np.diff(batch.offsets)
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - 10.0) <= 3 * se


@pytest.mark.parametrize("lam", [0.5, 1.0])
def test_cumulant_identity(lam):
    spec = EnvironmentSpec(0.0, (Atom(0.5, 1.0), Atom(1.5, 0.5)))
    batch = sample_paths(spec, 1.0, 100_000, 11)
    _, kv = batch.functionals(1.0, [1.0])
    x = np.exp(lam * kv[:, 0])
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - math.exp(phi(spec, lam))) <= 3 * se


def test_esscher_examples():
    assert esscher_spec(HALF, 0.0) is HALF
    tilted = esscher_spec(HALF, 1.0)
    assert tilted.atoms[0].m == 0.5 and tilted.atoms[0].rate == pytest.approx(0.5)


def test_esscher_mean_is_phi_prime():
    spec = EnvironmentSpec(0.0, (Atom(0.5, 1.0), Atom(2.0, 0.4)))
    batch = sample_paths(esscher_spec(spec, 1.0), 1.0, 100_000, 5)
    _, kv = batch.functionals(1.0, [1.0])
    se = kv[:, 0].std(ddof=1) / math.sqrt(len(batch))
    assert abs(kv[:, 0].mean() - phi_prime(spec, 1.0)) <= 3 * se


def test_esscher_consistency_bounded_function():
    spec = EnvironmentSpec(0.1, (Atom(0.5, 1.0),))
    lam, T = 0.7, 4.0
    plain = sample_paths(spec, T, 40_000, 21)
    tilt = sample_paths(esscher_spec(spec, lam), T, 40_000, 22)
    _, k0 = plain.functionals(1.0, [T])
    _, k1 = tilt.functionals(1.0, [T])
    g0 = np.tanh(k0[:, 0])
    g1 = np.tanh(k1[:, 0]) * np.exp(-lam * k1[:, 0] + T * phi_K(spec, lam))
    se = math.hypot(g0.std(ddof=1) / math.sqrt(g0.size), g1.std(ddof=1) / math.sqrt(g1.size))
    assert abs(g0.mean() - g1.mean()) <= 3 * se


def test_exp_functional_examples():
    assert exp_functional(JumpPath.from_jumps(5.0, [], 0.0), 1.0, 5.0) == pytest.approx(5.0)
    assert exp_functional(JumpPath.from_jumps(1.0, [], 1.0), 1.0, 1.0) == pytest.approx(
        1 - math.exp(-1), rel=1e-15)
    one = JumpPath.from_jumps(2.0, [(1.0, 0.5)], 0.0)
    assert exp_functional(one, 1.0, 2.0) == pytest.approx(3.0, rel=1e-15)
    with pytest.raises(ValueError):
        exp_functional(one, 1.0, 2.5)


def test_exp_functional_tiny_drift_uses_limit():
    p = JumpPath.from_jumps(2.0, [(1.0, 0.5)], 1e-16)
    assert exp_functional(p, 1.0, 2.0) == pytest.approx(3.0, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.8, 0.8), st.sampled_from([0.3, 0.5, 1.0]),
       st.floats(0.5, 6.0))
def test_exp_functional_matches_quadrature(seed, g, beta, t):
    spec = EnvironmentSpec(g, (Atom(0.5, 1.0), Atom(1.8, 0.6)))
    p = sample_path(spec, 6.0, seed)
    assert exp_functional(p, beta, t) == pytest.approx(quad_functional(p, beta, t), rel=1e-10)


def test_time_reversal_duality():
    spec = EnvironmentSpec(0.2, (Atom(0.5, 1.0), Atom(1.5, 0.5)))
    from scipy import stats

    t = 3.0
    batch = sample_paths(spec, t, 10_000, 31)
    J, kv = batch.functionals(1.0, [t])
    # exp(-K_t) int_0^t exp(K_s) ds on an independent path set
    other = sample_paths(spec, t, 10_000, 32)
    Jneg = np.empty(len(other))
    for i in range(len(other)):
        p = other.path(i)
        mirrored = JumpPath(p.horizon, p.times, -p.log_multipliers, -p.drift)
        Jneg[i] = math.exp(-p.K(t)) * exp_functional(mirrored, 1.0, t)
    assert stats.ks_2samp(J[:, 0], Jneg).statistic < 0.05


def test_discretized_functional_no_jumps():
    p = JumpPath.from_jumps(3.0, [], 0.0)
    a, lo, hi = discretized_functional(p, 1.0, 300, 100)
    assert a == pytest.approx(301.0)
    assert lo == pytest.approx(3.0) and hi == pytest.approx(3.0)


def test_discretized_functional_one_jump():
    p = JumpPath.from_jumps(2.0, [(1.0, 0.5)], 0.0)
    a, lo, hi = discretized_functional(p, 1.0, 200, 100)
    # exact value 3; the slope factor is at most 2 (the post-jump level)
    assert abs(a / 100 - 3.0) <= 3 * 2.0 / 100
    assert lo <= 3.0 <= hi


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 64), st.floats(-1.0, 1.0))
def test_pathwise_sandwich(seed, q, g):
    spec = EnvironmentSpec(g, (Atom(0.5, 1.0), Atom(2.0, 0.7)))
    p = sample_path(spec, 4.0, seed)
    pp = 4 * q
    _, lo, hi = discretized_functional(p, 1.0, pp, q)
    exact = exp_functional(p, 1.0, pp / q)
    assert lo <= exact * (1 + 1e-12) and exact <= hi * (1 + 1e-12)


def test_riemann_error_is_order_one_over_q():
    spec = EnvironmentSpec(0.1, (Atom(0.5, 1.0),))
    t = 8.0
    batch = sample_paths(spec, t, 20, 4)
    qs = 2 ** np.arange(4, 11)
    errs = np.empty((len(batch), qs.size))
    for i in range(len(batch)):
        p = batch.path(i)
        exact = exp_functional(p, 1.0, t)
        top = math.exp(-min(0.0, *(p.K(s) for s in np.append(p.times, t))))
        for j, q in enumerate(qs):
            a = discretized_functional(p, 1.0, int(t * q), int(q))[0] / q
            errs[i, j] = abs(a - exact)
            # one extra grid point plus one cell per jump and the drift variation
            assert q * errs[i, j] <= top * (2 + p.n_jumps + abs(spec.drift) * t)
    sup = errs.max(axis=0)
    slope = np.polyfit(np.log(qs), np.log(sup), 1)[0]
    assert -slope >= 0.9


def test_truncate_rate_matches_integral():
    dens = LevyDensity(lambda m: 0.3 / math.sqrt(abs(m - 1.0)), 0.0, 3.0)
    spec = truncate(dens, 0.1, 0.1)
    # int_0^0.9 + int_1.1^3 of 0.3 |m-1|^(-1/2) dm, in closed form
    exact = 0.3 * 2 * ((1.0 - math.sqrt(0.1)) + (math.sqrt(2.0) - math.sqrt(0.1)))
    assert spec.total_rate == pytest.approx(exact, rel=1e-8)


def test_truncate_monotone_in_eps():
    dens = LevyDensity(lambda m: 1.0 / abs(m - 1.0), 0.2, 2.0)
    rates = [truncate(dens, e, e).total_rate for e in (0.3, 0.1, 0.03, 0.01)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_truncate_keeps_atoms_outside_band():
    dens = LevyDensity(lambda m: 0.0 * m + 1.0, 0.1, 0.5)
    spec = truncate(dens, 0.05, 0.05, atoms=(Atom(0.5, 1.0),))
    assert spec.atoms == (Atom(0.5, 1.0),)


def test_path_rows_roundtrip():
    p = JumpPath.from_jumps(3.0, [(0.5, 0.5), (2.0, 1.5)], 0.2)
    rows = p.to_rows()
    assert rows[0] == (0.5, math.log(0.5))
    with pytest.raises(ValueError):
        JumpPath.from_jumps(3.0, [(2.0, 0.5), (1.0, 0.5)], 0.0)
