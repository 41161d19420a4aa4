"""Backward ODE for the quenched Laplace exponent along one environment path.

For a fixed path ``K``, ``v(s) = v_t(s, lam)`` solves

    dv/ds = exp(K_s) * psi0(exp(-K_s) v),    v(t) = lam,

and ``E[exp(-lam exp(-K_t) Y_t) | K] = exp(-x0 v(0))``.  The solver
integrates ``r = 1/v`` in reversed time ``tau = t - s``:

    dr/dtau = exp(-K) psi0(x) / x**2,   x = exp(-K) / r,

which stays bounded as ``lam -> inf`` (``r(t) = 1/lam -> 0``) and is
linear in ``r^beta`` for stable mechanisms.  Jump times are mesh points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .env import JumpPath
from .mechanisms import GeneralMechanism, StableMechanism, as_feller, sandwich
from .quenched_stable import functional_J, quenched_survival

__all__ = [
    "OdeSolution",
    "OdeFailure",
    "DEFAULT_LADDER",
    "solve_backward",
    "v0_closed_form",
    "survival_general",
    "survival_sandwich",
]

DEFAULT_LADDER = tuple(10.0 ** k for k in range(7))


class OdeFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class OdeSolution:
    v0: float
    trace: tuple | None     # ((s, v), ...) from s = t down to s = 0
    tol: float
    n_steps: int
    n_rejected: int

    @property
    def r0(self) -> float:
        return 1.0 / self.v0 if self.v0 > 0 else math.inf


def _mesh(path: JumpPath, t: float):
    """Segment bounds ``[0, jumps < t, t]`` and the jump sum on each segment."""
    inside = path.times < t
    bounds = np.concatenate(([0.0], path.times[inside], [t]))
    seg_s = np.concatenate(([0.0], np.cumsum(path.log_multipliers[inside])))
    return bounds, seg_s


def _check(mech, path: JumpPath, t: float) -> None:
    if abs(path.drift - mech.g) > 1e-12 * max(1.0, abs(mech.g)):
        raise ValueError(f"path drift {path.drift} differs from the mechanism growth rate {mech.g}")
    if not (0 < t <= path.horizon * (1 + 1e-12)):
        raise ValueError(f"t={t} must lie in (0, horizon={path.horizon}]")


def _solve_r(mech, r_end: float, t: float, path: JumpPath, tol: float,
             fixed_steps: int = 0, trace: list | None = None, backend=None):
    bounds, seg_s = _mesh(path, t)
    args = mech.kernel_args()
    r0, n_acc, n_rej, status = kernels.dopri_backward(
        bounds, seg_s, path.drift, t, r_end, tol, fixed_steps=fixed_steps,
        trace=trace, backend=backend, **args)
    if status == 1:
        raise OdeFailure(f"step size underflow after {n_acc} steps ({n_rej} rejected), "
                         f"r={r0!r}, tol={tol}")
    if status == 2:
        raise OdeFailure(f"step budget exhausted ({n_acc} accepted, {n_rej} rejected)")
    return r0, n_acc, n_rej


def solve_backward(mech, lam: float, t: float, path: JumpPath, tol: float = 1e-9,
                   trace: bool = False, fixed_steps: int = 0, backend=None) -> OdeSolution:
    """``v_t(0, lam)`` on ``path``; ``fixed_steps > 0`` disables step control."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check(mech, path, t)
    if getattr(mech, "is_trivial", False):
        tr = ((t, lam), (0.0, lam)) if trace else None
        return OdeSolution(float(lam), tr, tol, 0, 0)
    buf = [] if trace else None
    r_end = 0.0 if math.isinf(lam) else 1.0 / lam
    r0, n_acc, n_rej = _solve_r(mech, r_end, t, path, tol, fixed_steps, buf, backend)
    tr = None
    if trace:
        tr = ((t, float(lam)),) + tuple((s, 1.0 / r if r > 0 else math.inf) for s, r in buf)
    return OdeSolution(1.0 / r0 if r0 > 0 else math.inf, tr, tol, n_acc, n_rej)


def v0_closed_form(mech: StableMechanism, lam: float, t: float, path: JumpPath) -> float:
    """``[c_plus beta int_0^t exp(-beta K_s) ds + lam**(-beta)]**(-1/beta)``."""
    J = functional_J(mech, path, t)
    return (J + lam ** (-mech.beta)) ** (-1.0 / mech.beta)


def survival_general(mech, x0: float, t: float, path: JumpPath,
                     lam_ladder=DEFAULT_LADDER, tol: float = 1e-10) -> tuple[float, float]:
    """Bracket ``(lower, upper)`` of ``P(Y_t > 0 | path)`` from a ladder of ``lam``.

    ``1 - exp(-x0 v0(lam))`` increases to the survival probability, so the
    largest rung gives ``lower``.  ``upper`` comes from a lower bound on
    ``r0(inf) = 1/v0(inf)``: exact two-point extrapolation of ``r0**beta``
    in ``lam**(-beta)`` for stable mechanisms, and ``r_K - (r_{K-1} - r_K)``
    otherwise.
    """
    ladder = [float(v) for v in lam_ladder]
    if len(ladder) < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] <= 0:
        raise ValueError("lam_ladder must be a positive increasing sequence of length >= 2")
    _check(mech, path, t)
    if getattr(mech, "is_trivial", False):
        return 1.0, 1.0
    rs = [_solve_r(mech, 1.0 / lam, t, path, tol)[0] for lam in ladder]
    if any(b > a * (1 + 1e-9) for a, b in zip(rs, rs[1:])):
        raise OdeFailure("v0 is not increasing along the ladder; tighten tol")
    r_top = rs[-1]
    if isinstance(mech, StableMechanism):
        b = mech.beta
        x1, x2 = ladder[-2] ** -b, ladder[-1] ** -b
        y1, y2 = rs[-2] ** b, rs[-1] ** b
        slope = (y1 - y2) / (x1 - x2)
        y_inf = y2 - slope * x2
        # widen by the solver tolerance so the bracket stays valid
        y_inf -= 20 * tol * y2
        r_inf = max(y_inf, 0.0) ** (1.0 / b)
    else:
        r_inf = max(r_top - (rs[-2] - r_top) - 20 * tol * r_top, 0.0)
    lower = -math.expm1(-x0 / r_top)
    upper = 1.0 if r_inf == 0.0 else -math.expm1(-x0 / r_inf)
    return lower, upper


def survival_sandwich(mech: GeneralMechanism, x0: float, t: float,
                      path: JumpPath) -> tuple[float, float]:
    """Feller closed-form survivals for the quadratic mechanisms bracketing ``psi``.

    The larger diffusion coefficient gives the lower survival probability.
    """
    minus, plus = sandwich(mech)
    lo = quenched_survival(as_feller(plus), x0, t, path)
    hi = quenched_survival(as_feller(minus), x0, t, path)
    return lo, hi
