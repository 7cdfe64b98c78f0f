"""Independent reference computations used to derive frozen test values.

Nothing here imports the package under test; each oracle is a brute-force
or closed-form computation that does not share code with the implementation.
"""

from __future__ import annotations

import math

import numpy as np


def simpson(fun, a: float, b: float, panels: int = 10_000) -> float:
    """Composite Simpson rule with an even number of panels."""
    if panels % 2:
        panels += 1
    x = np.linspace(a, b, panels + 1)
    y = fun(x)
    hstep = (b - a) / panels
    return float(hstep / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def midpoint_mean(fun, a: float, b: float, samples: int = 1000) -> float:
    """Mean of ``fun`` over [a, b] by the midpoint rule."""
    x = a + (np.arange(samples) + 0.5) * (b - a) / samples
    return float(np.mean(fun(x)))


def bisect(fun, lo: float, hi: float, halvings: int = 200) -> float:
    """Plain bisection for an increasing function with ``fun(lo) < 0 < fun(hi)``."""
    flo = fun(lo)
    for _ in range(halvings):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if (fun(mid) < 0) == (flo < 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bump(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(np.abs(z) < 1, np.exp(-1.0 / np.clip(1 - z * z, 1e-300, None)), 0.0)


def heaviside_mollified(v: float, eps: float, slope: float = 1.0, jump: float = 1.0,
                        panels: int = 200_000) -> float:
    """``b_eps(v)`` for ``b(y) = slope*y + jump*[y > 0]``.

    The kernel is even, so the affine part is reproduced exactly and the jump
    contributes ``jump`` times the kernel mass on ``z < v/eps``; both kernel
    integrals are smooth and done by composite Simpson.
    """
    upper = min(max(v / eps, -1.0), 1.0)
    mass = simpson(_bump, -1.0, upper, panels) / simpson(_bump, -1.0, 1.0, panels)
    return slope * v + jump * mass


def stefan_one_phase_lambda(stefan: float) -> float:
    """Root of ``lam * exp(lam^2) * erf(lam) = St / sqrt(pi)`` (single-phase melting)."""
    return bisect(lambda lam: lam * math.exp(lam * lam) * math.erf(lam) - stefan / math.sqrt(math.pi),
                  0.0, 5.0)


def linear_two_node_step(v_prev, c: float, h: float, g: float, p: float, f0: float = 0.0):
    """Closed form of one implicit step for ``b(v) = v`` with a single space cell.

    Equations: ``(1 + c) v0 - v1 = c v0_prev + h^2 f0 - h g`` and ``v1 - v0 = h p``.
    """
    v0 = (c * v_prev[0] + h * h * f0 - h * g + h * p) / c
    return np.array([v0, v0 + h * p])
