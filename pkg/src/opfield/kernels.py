"""Closed-form Green kernels of ``-d^2/dx^2 + m^2`` on bounded intervals.

These are the analytic oracles for the finite element assembly. All kernels
are written with the exponentials factored out, so they stay finite for large
``m * L`` where ``sinh``/``cosh`` alone would overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Kernel1DParams:
    """Mass ``m``, length ``L`` and interface penalty ``alpha``.

    ``L`` is the interval length for the Dirichlet/Neumann kernels on (0, L)
    and the half-length for the interface kernel on (-L, L).
    """

    m: float
    L: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.m > 0 and np.isfinite(self.m)):
            raise DomainError(f"m must be positive, got {self.m}")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise DomainError(f"L must be positive, got {self.L}")
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")


def _check(v, lo, hi, name):
    v = np.asarray(v, dtype=float)
    tol = 1e-12 * (hi - lo)
    if np.any(~np.isfinite(v)) or np.any(v < lo - tol) or np.any(v > hi + tol):
        raise DomainError(f"{name} outside [{lo}, {hi}]")
    return np.clip(v, lo, hi)


def _ordered(p: Kernel1DParams, x, y):
    x = _check(x, 0.0, p.L, "x")
    y = _check(y, 0.0, p.L, "y")
    return np.minimum(x, y), np.maximum(x, y)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def green_dirichlet_1d(p: Kernel1DParams, x, y):
    """Green kernel on (0, L) with ``u(0) = u(L) = 0``.

    ``sinh(m*min) * sinh(m*(L - max)) / (m * sinh(m*L))``; broadcasts over
    array arguments.
    """
    m, L = p.m, p.L
    a, b = _ordered(p, x, y)
    num = -np.expm1(-2 * m * a) * -np.expm1(-2 * m * (L - b))
    return _out(np.exp(-m * (b - a)) * num / (2 * m * -np.expm1(-2 * m * L)))


def green_neumann_1d(p: Kernel1DParams, x, y):
    """Green kernel on (0, L) with ``u'(0) = u'(L) = 0``."""
    m, L = p.m, p.L
    a, b = _ordered(p, x, y)
    num = (1 + np.exp(-2 * m * a)) * (1 + np.exp(-2 * m * (L - b)))
    return _out(np.exp(-m * (b - a)) * num / (2 * m * -np.expm1(-2 * m * L)))


def green_interface_1d(p: Kernel1DParams, x, y):
    """Dirichlet kernel on (-L, L) with a point penalty ``alpha/2 Z(0)^2``.

    The penalty is a rank-one update of the penalty-free kernel ``G0``:
    ``G0(x,y) - alpha G0(x,0) G0(0,y) / (1 + alpha G0(0,0))``.
    """
    _check(x, -p.L, p.L, "x")
    _check(y, -p.L, p.L, "y")
    base = Kernel1DParams(p.m, 2 * p.L)
    xs = np.asarray(x, dtype=float) + p.L
    ys = np.asarray(y, dtype=float) + p.L
    # ordered arguments keep the result exactly symmetric
    xs, ys = np.minimum(xs, ys), np.maximum(xs, ys)
    g0 = green_dirichlet_1d(base, xs, ys)
    if p.alpha == 0:
        return g0
    gx0 = green_dirichlet_1d(base, xs, p.L)
    g0y = green_dirichlet_1d(base, p.L, ys)
    g00 = green_dirichlet_1d(base, p.L, p.L)
    return _out(g0 - p.alpha * gx0 * g0y / (1 + p.alpha * g00))


def green_1d(bc: str, a: float, c: float, L: float, x, y):
    """Green kernel of ``-a u'' + c u`` on (0, L) for constant ``a, c > 0``.

    Reduces to the unit-diffusion kernels with ``m = sqrt(c/a)``, scaled by
    ``1/a``.
    """
    p = Kernel1DParams(float(np.sqrt(c / a)), L)
    if bc == "dirichlet":
        return green_dirichlet_1d(p, x, y) / a
    if bc == "neumann":
        return green_neumann_1d(p, x, y) / a
    raise DomainError(f"no closed form for boundary condition {bc!r}")


def variogram_from_kernel(C: Callable, s, t):
    """Semivariance ``(C(s,s) + C(t,t) - 2 C(s,t)) / 2`` of a covariance kernel."""
    g = 0.5 * (np.asarray(C(s, s)) + np.asarray(C(t, t)) - 2 * np.asarray(C(s, t)))
    return _out(np.maximum(g, 0.0))
