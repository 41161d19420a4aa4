# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: batched exact exponential functionals, Riemann sums and
the Dormand-Prince backward solver for stable and atomic mechanisms."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs, pow, INFINITY

cnp.import_array()

cdef double G_EPS = 1e-14
cdef long MAX_STEPS = 1000000

cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920
cdef double E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40


cdef inline double _weight(double h, double drift, double bg) noexcept nogil:
    if fabs(drift) < G_EPS:
        return h
    return -expm1(-bg * h) / bg


def grid_functionals(const long[::1] offsets, const double[::1] times,
                     const double[::1] logm, double drift, double beta,
                     const double[::1] grid):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t m = grid.shape[0]
    inc_arr = np.empty((n, m))
    k_arr = np.empty((n, m))
    cdef double[:, ::1] inc = inc_arr
    cdef double[:, ::1] kout = k_arr
    cdef Py_ssize_t p, i, j, end
    cdef double bg = beta * drift
    cdef double pos, kpos, base, acc, b, tj
    with nogil:
        for p in range(n):
            j = offsets[p]
            end = offsets[p + 1]
            pos = 0.0
            kpos = 0.0
            base = 0.0
            for i in range(m):
                b = grid[i]
                acc = 0.0
                while j < end and times[j] <= b:
                    tj = times[j]
                    acc += exp(-beta * (kpos - base)) * _weight(tj - pos, drift, bg)
                    kpos += drift * (tj - pos) + logm[j]
                    pos = tj
                    j += 1
                if b > pos:
                    acc += exp(-beta * (kpos - base)) * _weight(b - pos, drift, bg)
                    kpos += drift * (b - pos)
                    pos = b
                inc[p, i] = acc
                kout[p, i] = kpos
                base = kpos
    return inc_arr, k_arr


def riemann_sums(const long[::1] offsets, const double[::1] times,
                 const double[::1] logm, double drift, double beta,
                 long q, long p):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, i, j, end
    cdef double s, cs, acc
    with nogil:
        for k in range(n):
            j = offsets[k]
            end = offsets[k + 1]
            cs = 0.0
            acc = 0.0
            for i in range(p + 1):
                s = <double>i / q
                while j < end and times[j] <= s:
                    cs += logm[j]
                    j += 1
                acc += exp(-beta * (drift * s + cs))
            out[k] = acc
    return out_arr


# --- backward ODE -----------------------------------------------------------

cdef struct Mech:
    int kind
    double c_plus
    double beta
    double sigma2
    const double *z
    const double *rho
    Py_ssize_t na


cdef inline double _phi2(double y) noexcept nogil:
    if y < 1e-4:
        return 0.5 - y / 6.0 + y * y / 24.0 - y * y * y / 120.0
    if y == INFINITY:
        return 0.0
    return (expm1(-y) + y) / (y * y)


cdef inline double _rhs(Mech *mc, double kval, double r) noexcept nogil:
    cdef double ek, x, acc
    cdef Py_ssize_t i
    if mc.kind == 0:
        return mc.c_plus * exp(-mc.beta * kval) * pow(r, 1.0 - mc.beta)
    ek = exp(-kval)
    x = ek / r if r > 0 else INFINITY
    acc = mc.sigma2
    for i in range(mc.na):
        acc += mc.rho[i] * mc.z[i] * mc.z[i] * _phi2(x * mc.z[i])
    return ek * acc


cdef inline double _f(Mech *mc, double drift, double t, double sk,
                      double tau, double r) noexcept nogil:
    return _rhs(mc, drift * (t - tau) + sk, r)


cdef inline double _step(Mech *mc, double drift, double t, double sk, double tau,
                         double r, double h, double k1, double *k7,
                         double *errsum) noexcept nogil:
    cdef double k2, k3, k4, k5, k6, rnew
    k2 = _f(mc, drift, t, sk, tau + C2 * h, r + h * A21 * k1)
    k3 = _f(mc, drift, t, sk, tau + C3 * h, r + h * (A31 * k1 + A32 * k2))
    k4 = _f(mc, drift, t, sk, tau + C4 * h, r + h * (A41 * k1 + A42 * k2 + A43 * k3))
    k5 = _f(mc, drift, t, sk, tau + C5 * h,
            r + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
    k6 = _f(mc, drift, t, sk, tau + h,
            r + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
    rnew = r + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    k7[0] = _f(mc, drift, t, sk, tau + h, rnew)
    errsum[0] = E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7[0]
    return rnew


def dopri_backward(const double[::1] bounds, const double[::1] seg_s,
                   double drift, double t, double r_end, double tol,
                   int kind, double c_plus, double beta, double sigma2,
                   const double[::1] z, const double[::1] rho,
                   long fixed_steps=0):
    """Same contract as the pure Python ``dopri_backward`` (no trace)."""
    cdef Mech mc
    mc.kind = kind
    mc.c_plus = c_plus
    mc.beta = beta
    mc.sigma2 = sigma2
    mc.na = z.shape[0]
    mc.z = &z[0] if mc.na > 0 else NULL
    mc.rho = &rho[0] if mc.na > 0 else NULL

    cdef double r = r_end
    cdef Py_ssize_t nseg = bounds.shape[0] - 1
    cdef long n_acc = 0, n_rej = 0
    cdef double hmin = 1e-14 * (t if t > 1.0 else 1.0)
    cdef double h = 0.0, ht, seg_len, sk, tau0, tau_end, tau, k1, k7, errsum
    cdef double rnew, sc, err, fac, hf, lim
    cdef Py_ssize_t k
    cdef long j
    cdef bint last
    cdef int status = 0
    with nogil:
        for k in range(nseg - 1, -1, -1):
            seg_len = bounds[k + 1] - bounds[k]
            if seg_len <= 0.0:
                continue
            sk = seg_s[k]
            tau0 = t - bounds[k + 1]
            tau_end = t - bounds[k]
            tau = tau0
            k1 = _f(&mc, drift, t, sk, tau, r)
            if fixed_steps > 0:
                hf = seg_len / fixed_steps
                for j in range(fixed_steps):
                    tau = tau0 + j * hf
                    k1 = _f(&mc, drift, t, sk, tau, r)
                    r = _step(&mc, drift, t, sk, tau, r, hf, k1, &k7, &errsum)
                    n_acc += 1
                continue
            if h <= 0.0:
                if k1 == 0.0:
                    h = seg_len
                else:
                    h = 0.1 * pow(tol, 0.2) * fabs(r) / fabs(k1)
                    if h > seg_len:
                        h = seg_len
            while tau < tau_end:
                last = False
                ht = h
                lim = fabs(tau_end)
                if lim < 1.0:
                    lim = 1.0
                if tau + ht >= tau_end - 1e-15 * lim:
                    ht = tau_end - tau
                    last = True
                rnew = _step(&mc, drift, t, sk, tau, r, ht, k1, &k7, &errsum)
                sc = tol * (fabs(r) if fabs(r) > fabs(rnew) else fabs(rnew)) + 1e-300
                err = fabs(errsum * ht) / sc
                if err <= 1.0 and rnew == rnew:
                    tau = tau_end if last else tau + ht
                    r = rnew
                    k1 = k7
                    n_acc += 1
                    if err == 0.0:
                        fac = 5.0
                    else:
                        fac = 0.9 * pow(err, -0.2)
                        if fac < 0.2:
                            fac = 0.2
                        if fac > 5.0:
                            fac = 5.0
                    if last:
                        if ht * fac > h:
                            h = ht * fac
                    else:
                        h = ht * fac
                else:
                    n_rej += 1
                    if err != err:
                        fac = 0.2
                    else:
                        fac = 0.9 * pow(err, -0.2)
                        if fac < 0.2:
                            fac = 0.2
                    h = ht * fac
                    if h < hmin:
                        status = 1
                        break
                if n_acc + n_rej > MAX_STEPS:
                    status = 2
                    break
            if status != 0:
                break
    return r, n_acc, n_rej, status
