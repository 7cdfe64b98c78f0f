"""Interpolations of a discrete state, discrete norms and the weak-form residual.

Three interpolants of the grid function ``v_i(k)`` are provided:

``tilde``
    piecewise constant, ``v_i(k)`` on ``[x_i, x_{i+1}) x (t_{k-1}, t_k]``;
``tau``
    piecewise linear in x through ``v_0(k), ..., v_m(k)``, piecewise constant in t
    on ``(t_{k-1}, t_k]``;
``hat_tau``
    piecewise linear in x and linear in t between consecutive levels.

Time cells are half-open on the left and ``t = 0`` belongs to level 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .discretization import Grid, _control_values
from .expressions import as_function, evaluate
from .io import fmt
from .physics import MollifiedEnthalpy
from .solver import DiscreteState

KINDS = ("tilde", "tau", "hat_tau")
_ALIASES = {"tilde_v": "tilde", "v_tau": "tau", "hat_v_tau": "hat_tau", "hat": "hat_tau"}


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Interpolant:
    state: DiscreteState
    kind: str = "hat_tau"

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown interpolant kind {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)

    @property
    def grid(self) -> Grid:
        return self.state.grid

    def __call__(self, x, t):
        return evaluate_interpolant(self, x, t)


def _locate(grid: Grid, x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    tiny = 1e-12
    if np.any((x < -tiny * grid.L) | (x > grid.L * (1 + tiny))):
        raise DomainError("x outside [0, L]")
    if np.any((t < -tiny * grid.T) | (t > grid.T * (1 + tiny))):
        raise DomainError("t outside [0, T]")
    i = np.clip(np.floor(x / grid.h).astype(int), 0, grid.m - 1)
    k = np.clip(np.ceil(t / grid.tau).astype(int), 0, grid.n)
    return x, t, i, k


def evaluate_interpolant(interp: Interpolant, x, t):
    grid = interp.grid
    v = interp.state.v
    x, t, i, k = _locate(grid, x, t)
    if interp.kind == "tilde":
        out = v[k, i]
    else:
        s = (x - grid.x[i]) / grid.h
        prof_k = v[k, i] + (v[k, i + 1] - v[k, i]) * s
        if interp.kind == "tau":
            out = prof_k
        else:
            km = np.maximum(k - 1, 0)
            prof_km = v[km, i] + (v[km, i + 1] - v[km, i]) * s
            theta = np.where(k > 0, (t - grid.t[km]) / grid.tau, 1.0)
            out = prof_km + (prof_k - prof_km) * theta
    return float(out) if np.ndim(out) == 0 else out


def sample_to_csv(interp: Interpolant, xs, ts, path) -> None:
    xs = np.asarray(xs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    X, Tt = np.meshgrid(xs, ts)
    vals = evaluate_interpolant(interp, X, Tt)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x={fmt(x)}" for x in xs])
        for t, row in zip(ts, np.atleast_2d(vals)):
            w.writerow([fmt(t)] + [fmt(val) for val in row])


# ---------------------------------------------------------------------------
# norms


def linf_norm(state: DiscreteState | np.ndarray) -> float:
    v = state.v if isinstance(state, DiscreteState) else np.asarray(state)
    return float(np.max(np.abs(v)))


def energy_norm(state: DiscreteState, grid: Grid | None = None) -> float:
    """Square root of ``sum tau h v_t^2 + max_k sum h v_x^2 + sum tau^2 h v_xt^2``.

    Space sums run over i = 0..m-1, time sums and the maximum over k = 1..n.
    """
    grid = state.grid if grid is None else grid
    v = state.v
    if v.shape != (grid.n + 1, grid.m + 1):
        raise ValueError("state shape does not match grid")
    tau, h = grid.tau, grid.h
    vt = np.diff(v[:, :-1], axis=0) / tau
    vx = np.diff(v, axis=1) / h
    vxt = np.diff(vx, axis=0) / tau
    total = (tau * h * np.sum(vt * vt)
             + h * float(np.max(np.sum(vx[1:] ** 2, axis=1)))
             + tau * tau * h * np.sum(vxt * vxt))
    return math.sqrt(float(total))


# ---------------------------------------------------------------------------
# equivalence identities between interpolants


_GAUSS3 = np.polynomial.legendre.leggauss(3)


def _cell_integral_sq(grid: Grid, fn) -> float:
    """Integral over D of ``fn(x, t)**2`` by 3x3 Gauss per grid cell (exact up to degree 5)."""
    z, w = _GAUSS3
    xq = (grid.x[:-1, None] + 0.5 * grid.h * (1 + z)).ravel()
    tq = (grid.t[:-1, None] + 0.5 * grid.tau * (1 + z)).ravel()
    wx = np.tile(0.5 * grid.h * w, grid.m)
    wt = np.tile(0.5 * grid.tau * w, grid.n)
    X, Tt = np.meshgrid(xq, tq)
    vals = fn(X, Tt)
    return float(wt @ (vals * vals) @ wx)


def tau_hat_gap(state: DiscreteState) -> tuple[float, float]:
    """Both sides of ``|v^tau - v^hat_tau|^2 = (tau^2/3) |d/dt v^hat_tau|^2`` (L2 over D)."""
    grid = state.grid
    tau_i = Interpolant(state, "tau")
    hat_i = Interpolant(state, "hat_tau")
    lhs = _cell_integral_sq(grid, lambda x, t: tau_i(x, t) - hat_i(x, t))
    # time derivative of the hat interpolant is the x-linear profile of v_t
    vt = np.diff(state.v, axis=0) / grid.tau
    a, b = vt[:, :-1], vt[:, 1:]
    rhs_int = grid.tau * grid.h * np.sum((a * a + a * b + b * b) / 3.0)
    return lhs, grid.tau**2 / 3.0 * float(rhs_int)


def tilde_tau_gap(state: DiscreteState) -> tuple[float, float]:
    """Both sides of ``|v~ - v^tau|^2 = sum_k sum_i (1/3) tau h^3 v_ix(k)^2``."""
    grid = state.grid
    tilde_i = Interpolant(state, "tilde")
    tau_i = Interpolant(state, "tau")
    lhs = _cell_integral_sq(grid, lambda x, t: tilde_i(x, t) - tau_i(x, t))
    vx = np.diff(state.v[1:], axis=1) / grid.h
    rhs = float(np.sum(grid.tau * grid.h**3 * vx * vx / 3.0))
    return lhs, rhs


# ---------------------------------------------------------------------------
# weak-form residual


@dataclass(frozen=True)
class TestFunction:
    """Smooth psi with its partial derivatives; psi(., T) must vanish."""

    name: str
    psi: Callable
    psi_x: Callable
    psi_t: Callable

    __test__ = False  # not a pytest class


def test_function_library(T: float, L: float) -> list[TestFunction]:
    w = math.pi / L
    zero = lambda x, t: 0.0 * x * t  # noqa: E731
    return [
        TestFunction("one", lambda x, t: (T - t) / T + 0.0 * x, zero, lambda x, t: -1.0 / T + 0.0 * x * t),
        TestFunction("x", lambda x, t: x * (T - t) / T, lambda x, t: (T - t) / T + 0.0 * x,
                     lambda x, t: -x / T + 0.0 * t),
        TestFunction("t(T-t)", lambda x, t: t * (T - t) + 0.0 * x, zero, lambda x, t: T - 2.0 * t + 0.0 * x),
        TestFunction("cos", lambda x, t: np.cos(w * x) * (T - t), lambda x, t: -w * np.sin(w * x) * (T - t),
                     lambda x, t: -np.cos(w * x) + 0.0 * t),
    ]


test_function_library.__test__ = False


_GAUSS4 = np.polynomial.legendre.leggauss(4)


def weak_residual(state: DiscreteState, psi: TestFunction, bm: MollifiedEnthalpy, problem, gd) -> float:
    """Left side of the weak identity for the hat interpolant of ``state``.

    ``B`` and ``B_0`` are both taken as the mollified enthalpy ``bm``; the data
    f, p, Phi come from ``problem`` and the boundary flux is the piecewise-linear
    interpolant of ``gd``.  Integrals use 4-point Gauss rules on every grid cell.
    """
    grid = state.grid
    T, L = grid.T, grid.L
    xs = np.linspace(0.0, L, 9)
    if np.max(np.abs(psi.psi(xs, np.full_like(xs, T)))) > 1e-12:
        raise ValueError(f"test function {psi.name!r} does not vanish at t = T")
    z, w = _GAUSS4
    xq = (grid.x[:-1, None] + 0.5 * grid.h * (1 + z)).ravel()
    tq = (grid.t[:-1, None] + 0.5 * grid.tau * (1 + z)).ravel()
    wx = np.tile(0.5 * grid.h * w, grid.m)
    wt = np.tile(0.5 * grid.tau * w, grid.n)
    X, Tt = np.meshgrid(xq, tq)

    hat = Interpolant(state, "hat_tau")
    vals = hat(X, Tt)
    v = state.v
    # x-derivative of the hat interpolant: linear in t between the level slopes
    slopes = np.diff(v, axis=1) / grid.h
    i = np.repeat(np.arange(grid.m), z.size)
    k = np.repeat(np.arange(1, grid.n + 1), z.size)
    theta = ((tq - grid.t[k - 1]) / grid.tau)[:, None]
    vx = slopes[k - 1][:, i] * (1 - theta) + slopes[k][:, i] * theta

    f_fn = as_function(problem.f, ("x", "t"))
    interior = (-bm.value(vals) * psi.psi_t(X, Tt) + vx * psi.psi_x(X, Tt)
                - evaluate(f_fn, X, Tt) * psi.psi(X, Tt))
    total = float(wt @ interior @ wx)

    phi_vals = evaluate(as_function(problem.phi, ("x",)), xq)
    total -= float(wx @ (bm.value(phi_vals) * psi.psi(xq, np.zeros_like(xq))))

    p_vals = evaluate(as_function(problem.p, ("t",)), tq)
    total -= float(wt @ (p_vals * psi.psi(np.full_like(tq, L), tq)))

    g = _control_values(gd)
    g_vals = np.interp(tq, grid.t, g)
    total += float(wt @ (g_vals * psi.psi(np.zeros_like(tq), tq)))
    return total
