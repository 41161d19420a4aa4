"""Backend selection for the hot kernels.

The compiled extension ``csbpcat._core`` is used when importable; otherwise
(or when ``CSBPCAT_PURE_PYTHON=1``) the numpy fallback is used.  Both expose
``grid_functionals``, ``riemann_sums`` and ``dopri_backward``.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

_core = None
if os.environ.get("CSBPCAT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        _core = None

BACKEND = "compiled" if _core is not None else "python"


def grid_functionals(offsets, times, logm, drift, beta, grid, backend=None):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=float)
    logm = np.ascontiguousarray(logm, dtype=float)
    grid = np.ascontiguousarray(grid, dtype=float)
    if _use_compiled(backend):
        return _core.grid_functionals(offsets, times, logm, float(drift),
                                      float(beta), grid)
    return _fallback.grid_functionals(offsets, times, logm, drift, beta, grid)


def riemann_sums(offsets, times, logm, drift, beta, q, p, backend=None):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=float)
    logm = np.ascontiguousarray(logm, dtype=float)
    if _use_compiled(backend):
        return _core.riemann_sums(offsets, times, logm, float(drift),
                                  float(beta), int(q), int(p))
    return _fallback.riemann_sums(offsets, times, logm, drift, beta, q, p)


def dopri_backward(bounds, seg_s, drift, t, r_end, tol, kind, c_plus=0.0,
                   beta=1.0, sigma2=0.0, z=(), rho=(), fixed_steps=0,
                   psi0=None, trace=None, backend=None):
    """Dispatch the backward solver.

    ``kind`` 0 is stable (``c_plus``, ``beta``), 1 is atomic general
    (``sigma2``, ``z``, ``rho``), 2 is an arbitrary ``psi0`` callable which
    always runs in Python, as does any call that asks for a ``trace``.
    """
    bounds = np.ascontiguousarray(bounds, dtype=float)
    seg_s = np.ascontiguousarray(seg_s, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    rho = np.ascontiguousarray(rho, dtype=float)
    if kind != 2 and trace is None and _use_compiled(backend):
        return _core.dopri_backward(bounds, seg_s, float(drift), float(t),
                                    float(r_end), float(tol), int(kind),
                                    float(c_plus), float(beta), float(sigma2),
                                    z, rho, int(fixed_steps))
    rhs = _fallback.make_rhs(kind, c_plus, beta, sigma2, z, rho, psi0)
    return _fallback.dopri_backward(list(bounds), list(seg_s), float(drift),
                                    float(t), float(r_end), float(tol), rhs,
                                    int(fixed_steps), trace)


def _use_compiled(backend):
    if backend is None:
        return _core is not None
    if backend == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernels are not built")
        return True
    if backend == "python":
        return False
    raise ValueError(f"unknown backend {backend!r}")
