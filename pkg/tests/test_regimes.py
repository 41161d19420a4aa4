import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbpcat.env import Atom, BetaComponent, EnvironmentSpec, ParetoComponent, phi_K, phi_K_prime
from csbpcat.regimes import (RegimeError, classify, find_tau, fit_rate,
                             predicted_log_survival, scaled)

HALF = EnvironmentSpec(0.0, (Atom(0.5, 1.0),))
LN2 = math.log(2.0)


def tau_oracle(g):
    # phi_K'(l) = g - ln2 * 2**(-l) for the single atom m=1/2 at rate 1
    return math.log2(LN2 / g)


def test_strongly_subcritical_example():
    r = classify(HALF, 0.1)
    assert r.label == "StronglySubcritical"
    assert r.exp_rate == pytest.approx(-0.4, abs=1e-15) and r.poly_exponent == 0
    assert str(r) == "StronglySubcritical rate=-0.4 kappa=0"


def test_intermediate_example():
    r = classify(HALF, LN2 / 2)
    assert r.label == "IntermediateSubcritical"
    assert r.exp_rate == pytest.approx(LN2 / 2 - 0.5, abs=1e-15)
    assert r.poly_exponent == 0.5


def test_weakly_subcritical_example():
    r = classify(HALF, 0.5)
    assert r.label == "WeaklySubcritical" and r.poly_exponent == 1.5
    tau = tau_oracle(0.5)
    assert tau == pytest.approx(0.471233, abs=1e-6)
    assert r.tau == pytest.approx(tau, abs=1e-13)
    # phi_K(tau) = g tau + g/ln2 - 1
    assert r.exp_rate == pytest.approx(0.5 * tau + 0.5 / LN2 - 1, abs=1e-14)
    assert r.exp_rate == pytest.approx(-0.043035, abs=1e-6)
    assert r.exp_rate < r.phi_K_1


def test_critical_and_supercritical():
    assert classify(HALF, LN2).label == "Critical"
    assert classify(HALF, LN2).poly_exponent == 0.5
    r = classify(HALF, 1.2)
    assert r.label == "Supercritical" and r.exp_rate == 0.0


@pytest.mark.parametrize("atoms", [
    (Atom(0.5, 1.0),),
    (Atom(0.3, 0.7), Atom(2.5, 0.2)),
    (Atom(0.8, 3.0), Atom(0.1, 0.05), Atom(1.3, 1.0)),
])
def test_constructed_critical(atoms):
    spec = EnvironmentSpec(0.0, atoms)
    g = -phi_K_prime(spec, 0.0)
    assert classify(spec, g).label == "Critical"


def test_symmetric_tau_is_half():
    # m and 1/m with rates 2 and 1: phi'(l) = ln2 (2**l - 2 * 2**-l), zero at l = 1/2
    spec = EnvironmentSpec(0.0, (Atom(0.5, 2.0), Atom(2.0, 1.0)))
    assert find_tau(spec, 0.0) == pytest.approx(0.5, abs=1e-14)
    assert phi_K_prime(spec, 0.0) == pytest.approx(-phi_K_prime(spec, 1.0), abs=1e-15)


@pytest.mark.parametrize("c", [0.1, 3.0, 17.0])
def test_scaling_invariance(c):
    for g in (0.1, LN2 / 2, 0.5, LN2, 1.2):
        base = classify(HALF, g)
        fast = classify(scaled(HALF.with_drift(g), c), g * c)
        assert fast.label == base.label
        assert fast.poly_exponent == base.poly_exponent
        assert fast.exp_rate == pytest.approx(c * base.exp_rate, rel=1e-12, abs=1e-15)
        if base.tau is not None:
            assert fast.tau == pytest.approx(base.tau, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.35, 0.69), st.floats(0.01, 50.0))
def test_tau_property(g, c):
    spec = scaled(HALF, c)
    tau = find_tau(spec, g * c)
    assert tau == pytest.approx(tau_oracle(g), abs=1e-12)
    env = spec.with_drift(g * c)
    assert abs(phi_K_prime(env, tau)) <= 1e-12 * max(1.0, g * c)
    grid = np.linspace(0.001, 0.999, 999)
    assert phi_K(env, tau) <= min(phi_K(env, s) for s in grid) + 1e-14


def test_find_tau_sign_error():
    with pytest.raises(RegimeError):
        find_tau(HALF, 0.1)


def test_theta_max_requirement():
    heavy = EnvironmentSpec(0.0, (), (ParetoComponent(1.0, 1.0),))
    with pytest.raises(RegimeError, match="first moment"):
        classify(heavy, -2.0)


def test_weak_with_beta_component():
    spec = EnvironmentSpec(0.0, (), (BetaComponent(2.0, 2.0, 1.0),))
    g = 0.5 * (-phi_K_prime(spec, 0.0)) + 0.5 * (-phi_K_prime(spec, 1.0))
    r = classify(spec, g)
    assert r.label == "WeaklySubcritical"
    assert r.exp_rate < r.phi_K_1


def test_fit_rate_exact():
    ts = np.arange(5.0, 65.0, 5.0)
    rho, kappa, r2 = fit_rate([(t, 3 * math.exp(-0.4 * t), 0.0) for t in ts])
    assert rho == pytest.approx(-0.4, abs=1e-10) and kappa == pytest.approx(0.0, abs=1e-10)
    rho, kappa, _ = fit_rate([(t, t ** -0.5, 0.0) for t in ts])
    assert rho == pytest.approx(0.0, abs=1e-10) and kappa == pytest.approx(0.5, abs=1e-10)


def test_fit_rate_noisy():
    rng = np.random.default_rng(2024)
    ts = np.arange(20.0, 220.0, 20.0)
    a = 5 * ts ** -1.5 * np.exp(-0.043 * ts) * (1 + 0.01 * rng.standard_normal(ts.size))
    rho, kappa, _ = fit_rate([(t, v, 0.01 * v) for t, v in zip(ts, a)])
    assert rho == pytest.approx(-0.043, rel=0.1)
    assert abs(kappa - 1.5) <= 0.3


def test_fit_rate_drops_nonpositive():
    ts = [1.0, 2.0, 3.0, 4.0, 5.0]
    with pytest.raises(ValueError):
        fit_rate([(t, v, 0.1) for t, v in zip(ts, [1.0, 0.0, -1.0, 0.5, 0.2])])


def test_predicted_log_survival():
    r = classify(HALF, 0.5)
    np.testing.assert_allclose(predicted_log_survival(r, [1.0, math.e]),
                               [r.exp_rate, r.exp_rate * math.e - 1.5])
