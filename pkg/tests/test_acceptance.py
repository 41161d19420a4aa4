"""Acceptance criteria 1-12.

Every Monte Carlo criterion uses the single seed below, fixed before any of
these runs were made, and the tolerances exactly as stated.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from csbpcat.cellmodel import phase_diagram
from csbpcat.config import load_model
from csbpcat.env import (Atom, EnvironmentSpec, discretized_functional, exp_functional,
                         sample_path, sample_paths)
from csbpcat.mechanisms import GeneralMechanism, StableMechanism
from csbpcat.montecarlo import annealed_survival_grid, clt_check, martingale_check
from csbpcat.quenched_ode import solve_backward, survival_general, survival_sandwich, v0_closed_form
from csbpcat.quenched_stable import quenched_survival, sample_feller_grid
from csbpcat.regimes import classify, fit_rate

SEED = 12345
WORKERS = 4
FIX = Path(__file__).resolve().parents[1] / "fixtures"
LN2 = math.log(2.0)


def fixture(name):
    return load_model(FIX / name)


def rate_run(name, t_grid, method, n=100_000):
    m = fixture(name)
    est = annealed_survival_grid(m.mech, m.x0, m.spec, t_grid, n, method, SEED, WORKERS)
    rho, kappa, _ = fit_rate([(e.t, e.value, e.stderr) for e in est])
    return m, est, rho, kappa


def test_c01_closed_form_vs_ode(report):
    t0 = time.perf_counter()
    spec = EnvironmentSpec(0.1, (Atom(0.5, 1.0), Atom(1.5, 0.5)))
    batch = sample_paths(spec, 20.0, 100, SEED)
    worst = 0.0
    for beta in (0.5, 1.0):
        mech = StableMechanism(0.1, 1.0, beta)
        for i in range(len(batch)):
            p = batch.path(i)
            for t in (1.0, 5.0, 20.0):
                for lam in (0.1, 1.0, 10.0):
                    v = solve_backward(mech, lam, t, p, tol=1e-9).v0
                    ref = v0_closed_form(mech, lam, t, p)
                    worst = max(worst, abs(v - ref) / ref)
    dt = time.perf_counter() - t0
    ok = report(1, worst <= 1e-6 and dt < 60, f"max rel err {worst:.2e} (<= 1e-6), {dt:.1f} s")
    assert ok


def test_c02_feller_sampler(report):
    t0 = time.perf_counter()
    m = fixture("strongly_subcritical.yaml")
    t = 5.0
    path = sample_path(m.spec, t, SEED)
    y = sample_feller_grid(m.mech, m.x0, [t], path, SEED, size=100_000)[:, 0]
    q0 = 1.0 - quenched_survival(m.mech, m.x0, t, path)
    p0 = float(np.mean(y == 0))
    se0 = math.sqrt(q0 * (1 - q0) / y.size)
    target = m.x0 * math.exp(path.K(t))
    se_mean = y.std(ddof=1) / math.sqrt(y.size)
    dt = time.perf_counter() - t0
    ok0 = abs(p0 - q0) <= 3 * se0
    ok1 = abs(y.mean() - target) <= 3 * se_mean
    ok = report(2, ok0 and ok1 and dt < 60,
                f"P(Y=0) {p0:.5f} vs {q0:.5f} ({abs(p0 - q0) / se0:.2f} SE); "
                f"mean {y.mean():.5f} vs {target:.5f} ({abs(y.mean() - target) / se_mean:.2f} SE), "
                f"{dt:.1f} s")
    assert ok


def test_c03_annealed_mean(report):
    t0 = time.perf_counter()
    m = fixture("strongly_subcritical.yaml")
    parts = []
    ok = True
    for t, target in ((5.0, math.exp(-2.0)), (10.0, math.exp(-4.0))):
        r = martingale_check(m.mech, m.x0, m.spec, t, 200_000, SEED, WORKERS)
        assert r.target_Y == pytest.approx(target, rel=1e-14)
        ok &= r.y_ok
        parts.append(f"t={t:g}: {r.mean_Y:.5f} vs {target:.5f} "
                     f"({abs(r.mean_Y - target) / r.se_Y:.2f} SE)")
    dt = time.perf_counter() - t0
    ok = report(3, ok and dt < 60, "; ".join(parts) + f", {dt:.1f} s")
    assert ok


def test_c04_strongly_subcritical_rate(report):
    t0 = time.perf_counter()
    m, _, rho, kappa = rate_run("strongly_subcritical.yaml", np.arange(10.0, 61.0, 10.0),
                                "esscher:1")
    target = classify(m.spec, m.g).exp_rate
    dt = time.perf_counter() - t0
    ok = report(4, abs(rho - target) <= 0.05 * abs(target) and -0.25 <= kappa <= 0.25 and dt < 300,
                f"rho {rho:.5f} vs {target:.5f}, kappa {kappa:.3f} in [-0.25, 0.25], {dt:.1f} s")
    assert ok


def test_c05_intermediate_rate(report):
    t0 = time.perf_counter()
    m, _, rho, kappa = rate_run("intermediate.yaml", np.arange(40.0, 201.0, 20.0), "esscher:auto")
    rep = classify(m.spec, m.g)
    assert rep.label == "IntermediateSubcritical"
    target = rep.exp_rate
    assert target == pytest.approx(LN2 / 2 - 0.5, abs=1e-15)
    dt = time.perf_counter() - t0
    ok = report(5, abs(rho - target) <= 0.05 * abs(target) and 0.25 <= kappa <= 0.75 and dt < 300,
                f"rho {rho:.5f} vs {target:.5f}, kappa {kappa:.3f} in [0.25, 0.75], "
                f"t 40..200, {dt:.1f} s")
    assert ok


def test_c06_weakly_subcritical_rate(report):
    t0 = time.perf_counter()
    m, est, rho, kappa = rate_run("weakly_subcritical.yaml", np.arange(40.0, 161.0, 20.0),
                                  "esscher:auto")
    rep = classify(m.spec, m.g)
    assert rep.tau == pytest.approx(0.471233, abs=1e-6)
    assert est[0].method.startswith("esscher(0.4712336")
    target = rep.exp_rate
    dt = time.perf_counter() - t0
    ok = report(6, abs(rho - target) <= 0.10 * abs(target) and 1.0 <= kappa <= 2.0 and dt < 600,
                f"rho {rho:.5f} vs {target:.5f}, kappa {kappa:.3f} in [1, 2], {dt:.1f} s")
    assert ok


def test_c07_critical_exponent(report):
    t0 = time.perf_counter()
    m, _, rho, kappa = rate_run("critical.yaml", np.arange(20.0, 201.0, 20.0), "plain")
    assert classify(m.spec, m.g).label == "Critical"
    dt = time.perf_counter() - t0
    ok = report(7, 0.35 <= kappa <= 0.65 and abs(rho) <= 0.01 and dt < 300,
                f"kappa {kappa:.3f} in [0.35, 0.65], rho {rho:.5f} within 0.01 of 0, {dt:.1f} s")
    assert ok


def test_c08_sandwich(report):
    t0 = time.perf_counter()
    m = fixture("general_sandwich.yaml")
    assert isinstance(m.mech, GeneralMechanism)
    t = 5.0
    batch = sample_paths(m.spec, t, 50, SEED)
    bad = 0
    worst = -math.inf
    for i in range(len(batch)):
        p = batch.path(i)
        lo, hi = survival_sandwich(m.mech, m.x0, t, p)
        blo, bhi = survival_general(m.mech, m.x0, t, p)
        margin = max(lo - blo, bhi - hi)
        worst = max(worst, margin)
        bad += margin > 1e-9
    dt = time.perf_counter() - t0
    ok = report(8, bad == 0 and dt < 60,
                f"{50 - bad}/50 paths with psi+ <= bracket <= psi- "
                f"(largest violation {max(worst, 0):.1e}), {dt:.1f} s")
    assert ok


def test_c09_clt(report):
    t0 = time.perf_counter()
    m = fixture("supercritical.yaml")
    r = clt_check(m.mech, m.x0, m.spec, 200.0, 300_000, SEED, WORKERS)
    dt = time.perf_counter() - t0
    ok = report(9, r.ks < 0.05 and r.n_survivors >= 2000 and dt < 300,
                f"KS {r.ks:.4f} (< 0.05) on {r.n_survivors} survivors, "
                f"m {r.m_hat:.6f}, rho {r.rho:.6f}, {dt:.1f} s")
    assert ok


def test_c10_phase_diagram(report):
    t0 = time.perf_counter()
    thetas = np.round(np.arange(0.01, 0.4901, 0.01), 10)
    grs = np.round(np.arange(0.0, 3.0001, 0.02), 10)
    rows = phase_diagram(thetas, grs)
    col_err = max(max(abs(r["boundary_supercritical"] + math.log(r["theta"] * (1 - r["theta"]))),
                      abs(r["boundary_strong"] + r["theta"] * math.log(r["theta"])
                          + (1 - r["theta"]) * math.log(1 - r["theta"])))
                  for r in rows)
    step = 0.02
    flips_ok = True
    scans = phase_diagram([0.1, 0.25, 0.4], grs)
    for th in (0.1, 0.25, 0.4):
        scan = [r for r in scans if r["theta"] == th]
        sup, strong = scan[0]["boundary_supercritical"], scan[0]["boundary_strong"]
        first_sup = min(r["g_over_r"] for r in scan if r["label"] == "Supercritical")
        last_strong = max(r["g_over_r"] for r in scan if r["label"] == "StronglySubcritical")
        flips_ok &= 0 <= first_sup - sup <= step and 0 <= strong - last_strong <= step
        # labels only move one way along g/r
        order = ["StronglySubcritical", "IntermediateSubcritical", "WeaklySubcritical",
                 "Critical", "Supercritical"]
        idx = [order.index(r["label"]) for r in scan]
        flips_ok &= idx == sorted(idx)
    dt = time.perf_counter() - t0
    ok = report(10, col_err <= 1e-12 and flips_ok and dt < 60,
                f"boundary column error {col_err:.1e}, flips within one step: {flips_ok}, "
                f"{dt:.1f} s")
    assert ok


def test_c11_discretization(report):
    t0 = time.perf_counter()
    m = fixture("strongly_subcritical.yaml")
    t = 10.0
    qs = [16, 32, 64, 128, 256, 512]
    batch = sample_paths(m.spec, t, 20, SEED)
    errs = np.empty((len(batch), len(qs)))
    for i in range(len(batch)):
        p = batch.path(i)
        exact = exp_functional(p, 1.0, t)
        for j, q in enumerate(qs):
            errs[i, j] = abs(discretized_functional(p, 1.0, int(math.floor(q * t)), q)[0] / q - exact)
    sup = errs.max(axis=0)
    ratios = sup[1:] / sup[:-1]
    dt = time.perf_counter() - t0
    ok = report(11, bool(np.all((ratios >= 0.25) & (ratios <= 0.75))) and dt < 30,
                "sup-error ratios " + " ".join(f"{r:.3f}" for r in ratios)
                + f" in [0.25, 0.75], {dt:.1f} s")
    assert ok


def test_c12_determinism(report):
    t0 = time.perf_counter()
    m = fixture("strongly_subcritical.yaml")
    grid = np.arange(10.0, 61.0, 10.0)
    a = annealed_survival_grid(m.mech, m.x0, m.spec, grid, 100_000, "esscher:1", SEED, WORKERS)
    b = annealed_survival_grid(m.mech, m.x0, m.spec, grid, 100_000, "esscher:1", SEED, WORKERS)
    c = annealed_survival_grid(m.mech, m.x0, m.spec, grid, 100_000, "esscher:1", SEED, 1)
    r1 = martingale_check(m.mech, m.x0, m.spec, 5.0, 50_000, SEED, WORKERS)
    r2 = martingale_check(m.mech, m.x0, m.spec, 5.0, 50_000, SEED, WORKERS)
    sup = fixture("supercritical.yaml")
    k1 = clt_check(sup.mech, sup.x0, sup.spec, 20.0, 20_000, SEED, WORKERS)
    k2 = clt_check(sup.mech, sup.x0, sup.spec, 20.0, 20_000, SEED, WORKERS)
    dt = time.perf_counter() - t0
    same = a == b and r1 == r2 and k1 == k2
    ok = report(12, same, f"reruns bit-identical: {same}; "
                f"also across worker counts: {a == c}, {dt:.1f} s")
    assert ok
