"""Pure Python / numpy implementations of the hot kernels.

These mirror ``_core.pyx`` operation for operation and are used when the
compiled extension is unavailable (or ``CSBPCAT_PURE_PYTHON=1``).
"""
from __future__ import annotations

import math

import numpy as np

G_EPS = 1e-14
MAX_STEPS = 1_000_000

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                          -17253 / 339200, 22 / 525, -1 / 40)


def segment_weight(h, bg):
    """Integral of exp(-bg*u) over [0, h]."""
    if abs(bg) < G_EPS:
        return h
    return -math.expm1(-bg * h) / bg


def grid_functionals(offsets, times, logm, drift, beta, grid):
    """Per-interval exponential functionals for a batch of paths.

    Returns ``(inc, K)`` of shape ``(n_paths, len(grid))`` where
    ``inc[p, i]`` is the integral of ``exp(-beta*(K_s - K_a))`` over the
    i-th grid interval ``[a, b]`` (``a`` is the previous grid point, 0 for
    the first) and ``K[p, i]`` is ``K_b`` (right-continuous).
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    logm = np.asarray(logm, dtype=float)
    grid = np.asarray(grid, dtype=float)
    n = offsets.size - 1
    m = grid.size
    counts = np.diff(offsets)
    total = int(offsets[-1])
    bg = beta * drift

    # segment k of path p starts at its k-th jump (k=0 starts at time 0)
    seg_path = np.repeat(np.arange(n), counts + 1)
    seg_first = offsets[:-1] + np.arange(n)          # index of first segment per path
    seg_start = np.zeros(total + n)
    seg_s = np.zeros(total + n)                       # cumulative log-jump on segment
    jump_slot = np.ones(total + n, dtype=bool)
    jump_slot[seg_first] = False
    seg_start[jump_slot] = times
    # extended precision keeps the per-path differences of a global cumsum exact
    csum = np.cumsum(logm.astype(np.longdouble))
    base = np.concatenate((np.zeros(1, dtype=np.longdouble), csum))[offsets[:-1]]
    seg_s[jump_slot] = (csum - np.repeat(base, counts)).astype(float)
    seg_end = np.empty_like(seg_start)
    seg_end[:-1] = seg_start[1:]
    seg_end[seg_first[1:] - 1] = np.inf
    seg_end[-1] = np.inf

    inc = np.empty((n, m))
    kout = np.empty((n, m))
    prev = 0.0
    for i, b in enumerate(grid):
        a = prev
        # value of the cumulative log-jump at a and at b, per path
        s_a = _jump_sum_at(seg_start, seg_s, seg_path, seg_first, jump_slot, n, a)
        s_b = _jump_sum_at(seg_start, seg_s, seg_path, seg_first, jump_slot, n, b)
        lo = np.maximum(seg_start, a)
        hi = np.minimum(seg_end, b)
        h = np.clip(hi - lo, 0.0, None)
        rel = drift * (lo - a) + seg_s - s_a[seg_path]
        if abs(drift) < G_EPS:
            w = h
        else:
            w = -np.expm1(-bg * h) / bg
        live = h > 0
        contrib = np.exp(-beta * rel[live]) * w[live]
        inc[:, i] = np.bincount(seg_path[live], weights=contrib, minlength=n)
        kout[:, i] = drift * b + s_b
        prev = b
    return inc, kout


def _jump_sum_at(seg_start, seg_s, seg_path, seg_first, jump_slot, n, t):
    """Cumulative log-jump (right-continuous) at time t for every path."""
    hit = jump_slot & (seg_start <= t)
    count = np.bincount(seg_path[hit], minlength=n)
    return seg_s[seg_first + count]


def riemann_sums(offsets, times, logm, drift, beta, q, p):
    """``sum_{i=0}^{p} exp(-beta*K_{i/q})`` for every path in the batch."""
    offsets = np.asarray(offsets, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    logm = np.asarray(logm, dtype=float)
    n = offsets.size - 1
    s = np.arange(p + 1) / q
    out = np.empty(n)
    for k in range(n):
        lo, hi = offsets[k], offsets[k + 1]
        cs = np.concatenate(([0.0], np.cumsum(logm[lo:hi])))
        idx = np.searchsorted(times[lo:hi], s, side="right")
        kv = drift * s + cs[idx]
        out[k] = np.exp(-beta * kv).sum()
    return out


# --- backward ODE -----------------------------------------------------------

def _phi2(y):
    """(exp(-y) - 1 + y) / y**2, stable near 0."""
    if y < 1e-4:
        return 0.5 - y / 6.0 + y * y / 24.0 - y * y * y / 120.0
    if y == math.inf:
        return 0.0
    return (math.expm1(-y) + y) / (y * y)


def make_rhs(kind, c_plus, beta, sigma2, z, rho, psi0=None):
    """Right-hand side F(K, r) of the reciprocal formulation r = 1/v.

    dr/dtau = exp(-K) * psi0(x) / x**2 with x = exp(-K)/r and tau = t - s.
    """
    if kind == 0:
        e = 1.0 - beta

        def rhs(kval, r):
            return c_plus * math.exp(-beta * kval) * r ** e
    elif kind == 1:
        zs = [float(v) for v in z]
        rs = [float(v) for v in rho]

        def rhs(kval, r):
            ek = math.exp(-kval)
            x = ek / r if r > 0 else math.inf
            acc = sigma2
            for zi, ri in zip(zs, rs):
                acc += ri * zi * zi * _phi2(x * zi)
            return ek * acc
    else:
        def rhs(kval, r):
            ek = math.exp(-kval)
            x = ek / r
            return ek * psi0(x) / (x * x)
    return rhs


def dopri_backward(bounds, seg_s, drift, t, r_end, tol, rhs,
                   fixed_steps=0, trace=None):
    """Integrate r from s=t back to s=0 over the mesh ``bounds``.

    ``bounds`` is ascending ``[0, b_1, ..., t]``; on ``[b_k, b_{k+1})`` the
    environment is ``K_s = drift*s + seg_s[k]``.  Returns
    ``(r0, n_steps, n_rejected, status)``; status 0 ok, 1 step underflow,
    2 step budget exhausted.
    """
    r = r_end
    nseg = len(bounds) - 1
    n_acc = 0
    n_rej = 0
    hmin = 1e-14 * max(1.0, t)
    h = 0.0
    for k in range(nseg - 1, -1, -1):
        s_lo = bounds[k]
        s_hi = bounds[k + 1]
        seg_len = s_hi - s_lo
        if seg_len <= 0.0:
            continue
        sk = seg_s[k]
        tau0 = t - s_hi
        tau_end = t - s_lo

        def f(tau, rv):
            return rhs(drift * (t - tau) + sk, rv)

        tau = tau0
        k1 = f(tau, r)
        if fixed_steps > 0:
            hf = seg_len / fixed_steps
            for j in range(fixed_steps):
                tau = tau0 + j * hf
                k1 = f(tau, r)
                r, _, _ = _dp_step(f, tau, r, hf, k1)
                n_acc += 1
                if trace is not None:
                    trace.append((t - (tau + hf), r))
            continue
        if h <= 0.0:
            h = seg_len if k1 == 0.0 else min(seg_len, 0.1 * tol ** 0.2 * abs(r) / abs(k1))
        while tau < tau_end:
            last = False
            ht = h
            if tau + ht >= tau_end - 1e-15 * max(1.0, abs(tau_end)):
                ht = tau_end - tau
                last = True
            rnew, k7, errsum = _dp_step(f, tau, r, ht, k1)
            sc = tol * max(abs(r), abs(rnew)) + 1e-300
            err = abs(errsum * ht) / sc
            if err <= 1.0 and rnew == rnew:
                tau = tau_end if last else tau + ht
                r = rnew
                k1 = k7
                n_acc += 1
                if trace is not None:
                    trace.append((t - tau, r))
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                # a clipped final step does not shrink the carried proposal
                h = max(h, ht * fac) if last else ht * fac
            else:
                n_rej += 1
                fac = 0.2 if err != err else max(0.2, 0.9 * err ** -0.2)
                h = ht * fac
                if h < hmin:
                    return r, n_acc, n_rej, 1
            if n_acc + n_rej > MAX_STEPS:
                return r, n_acc, n_rej, 2
    return r, n_acc, n_rej, 0


def _dp_step(f, tau, r, h, k1):
    k2 = f(tau + C2 * h, r + h * A21 * k1)
    k3 = f(tau + C3 * h, r + h * (A31 * k1 + A32 * k2))
    k4 = f(tau + C4 * h, r + h * (A41 * k1 + A42 * k2 + A43 * k3))
    k5 = f(tau + C5 * h, r + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
    k6 = f(tau + h, r + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
    rnew = r + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    k7 = f(tau + h, rnew)
    errsum = E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7
    return rnew, k7, errsum
