"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3]

Prints wall time per kernel and backend, the speed-up, and the largest
difference between the two backends, relative to max(|value|, 1).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from csbpcat import kernels
from csbpcat.env import Atom, EnvironmentSpec, sample_paths
from csbpcat.mechanisms import GeneralMechanism, StableMechanism


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--horizon", type=float, default=40.0)
    ap.add_argument("--ode-paths", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    spec = EnvironmentSpec(0.1, (Atom(0.5, 1.0), Atom(1.5, 0.5)))
    batch = sample_paths(spec, args.horizon, args.paths, seed=1)
    grid = np.linspace(1.0, args.horizon, 40)
    rows = []

    def functionals(backend):
        return kernels.grid_functionals(batch.offsets, batch.times, batch.log_multipliers,
                                        batch.drift, 1.0, grid, backend=backend)

    def riemann(backend):
        return kernels.riemann_sums(batch.offsets, batch.times, batch.log_multipliers,
                                    batch.drift, 1.0, 64, int(64 * args.horizon), backend=backend)

    small = batch.head(args.ode_paths)
    mechs = {"ode_stable": StableMechanism(0.1, 1.0, 0.5),
             "ode_atoms": GeneralMechanism(0.1, 1.0, ((1.0, 1.0),))}

    def ode(mech, backend):
        out = []
        for i in range(len(small)):
            p = small.path(i)
            bounds = np.concatenate(([0.0], p.times, [args.horizon]))
            seg_s = np.concatenate(([0.0], np.cumsum(p.log_multipliers)))
            out.append(kernels.dopri_backward(bounds, seg_s, p.drift, args.horizon, 0.1, 1e-9,
                                              backend=backend, **mech.kernel_args())[0])
        return np.array(out)

    cases = {"grid_functionals": functionals, "riemann_sums": riemann}
    for name, mech in mechs.items():
        cases[name] = (lambda m: (lambda b: ode(m, b)))(mech)

    for name, fn in cases.items():
        tc, oc = best_of(lambda: fn("compiled"), args.repeat)
        tp, op = best_of(lambda: fn("python"), args.repeat)
        a = np.concatenate([np.ravel(x) for x in (oc if isinstance(oc, tuple) else (oc,))])
        b = np.concatenate([np.ravel(x) for x in (op if isinstance(op, tuple) else (op,))])
        rel = np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))
        rows.append((name, tc, tp, tp / tc, rel))

    print(f"{'kernel':<18}{'compiled s':>12}{'python s':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, tc, tp, sp, rel in rows:
        print(f"{name:<18}{tc:>12.4f}{tp:>12.4f}{sp:>10.1f}{rel:>14.2e}")


if __name__ == "__main__":
    main()
