"""Uniform grids, Steklov (cell-mean) data, control maps and the discrete w_2^1 ball."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expressions import (PiecewiseLinear, Poly, Samples, as_function, cell_averages_1d,
                          cell_averages_2d, evaluate)
from .io import fmt


@dataclass(frozen=True)
class Grid:
    n: int
    m: int
    T: float
    L: float

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m or self.n < 1 or self.m < 1:
            raise ValueError("n and m must be integers >= 1")
        if not (self.T > 0 and self.L > 0):
            raise ValueError("T and L must be positive")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))

    @property
    def tau(self) -> float:
        return self.T / self.n

    @property
    def h(self) -> float:
        return self.L / self.m

    @property
    def t(self) -> np.ndarray:
        return self.tau * np.arange(self.n + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(self.m + 1)

    def refined(self, factor_n: int, factor_m: int | None = None) -> "Grid":
        return Grid(self.n * factor_n, self.m * (factor_n if factor_m is None else factor_m), self.T, self.L)


@dataclass(frozen=True, eq=False)
class SteklovData:
    """Cell means of the problem data on a grid.

    ``f_avg[k-1, i]`` is the mean of f over ``[t_{k-1}, t_k] x [x_i, x_{i+1}]``;
    ``p_avg``/``gamma_avg`` hold the n time-cell means (k = 1..n);
    ``phi_avg`` holds m space-cell means followed by ``Phi(L)``.
    """

    f_avg: np.ndarray
    p_avg: np.ndarray
    phi_avg: np.ndarray
    gamma_avg: np.ndarray | None = None
    R: float = math.inf

    def check(self, grid: Grid) -> None:
        if self.f_avg.shape != (grid.n, grid.m):
            raise ValueError(f"f_avg has shape {self.f_avg.shape}, expected {(grid.n, grid.m)}")
        if self.p_avg.shape != (grid.n,):
            raise ValueError("p_avg must have n entries")
        if self.phi_avg.shape != (grid.m + 1,):
            raise ValueError("phi_avg must have m+1 entries")
        if self.gamma_avg is not None and self.gamma_avg.shape != (grid.n,):
            raise ValueError("gamma_avg must have n entries")

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "f_avg.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"i={i}" for i in range(self.f_avg.shape[1])])
            for k, row in enumerate(self.f_avg, start=1):
                w.writerow([k] + [fmt(x) for x in row])
        _write_vector(directory / "p_avg.csv", "k", range(1, self.p_avg.size + 1), self.p_avg)
        _write_vector(directory / "phi_avg.csv", "i", range(self.phi_avg.size), self.phi_avg)
        if self.gamma_avg is not None:
            _write_vector(directory / "gamma_avg.csv", "k", range(1, self.gamma_avg.size + 1), self.gamma_avg)

    @classmethod
    def from_csv(cls, directory, R: float = math.inf) -> "SteklovData":
        directory = Path(directory)
        with open(directory / "f_avg.csv", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        f_avg = np.array([[float(x) for x in r[1:]] for r in rows])
        gamma_path = directory / "gamma_avg.csv"
        return cls(f_avg, _read_vector(directory / "p_avg.csv"), _read_vector(directory / "phi_avg.csv"),
                   _read_vector(gamma_path) if gamma_path.exists() else None, R)


def _write_vector(path, index_name, index, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name, "value"])
        for i, x in zip(index, values):
            w.writerow([i, fmt(x)])


def _read_vector(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


@dataclass(frozen=True, eq=False)
class DiscreteControl:
    """Grid values ``(g_0, ..., g_n)`` of the left boundary flux."""

    g: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 1 or g.size < 2 or not np.all(np.isfinite(g)):
            raise ValueError("control must be a finite vector of length n+1 >= 2")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.g.size - 1

    def flux_averages(self) -> np.ndarray:
        """Cell means ``g_k^n`` of the piecewise-linear interpolant, k = 1..n."""
        return 0.5 * (self.g[1:] + self.g[:-1])

    def to_csv(self, path, grid: Grid) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k", "g_k"])
            for k, (t, g) in enumerate(zip(grid.t, self.g)):
                w.writerow([k, fmt(t), fmt(g)])


def _control_values(gd) -> np.ndarray:
    return gd.g if isinstance(gd, DiscreteControl) else np.asarray(gd, dtype=float)


def steklov_averages(grid: Grid, *, phi, f=0.0, p=0.0, gamma=None, R: float = math.inf) -> SteklovData:
    """Cell means of the data: ``f(x, t)``, ``p(t)``, ``Phi(x)`` and optional ``Gamma(t)``.

    Polynomial and piecewise-linear data are averaged exactly; other callables
    by adaptive quadrature.
    """
    phi_fn = as_function(phi, ("x",))
    f_fn = as_function(f, ("x", "t"))
    p_fn = as_function(p, ("t",))
    x_edges, t_edges = grid.x, grid.t
    phi_avg = np.concatenate([cell_averages_1d(phi_fn, x_edges), [float(evaluate(phi_fn, grid.L))]])
    if isinstance(f_fn, Poly) and not f_fn.terms:
        f_avg = np.zeros((grid.n, grid.m))
    else:
        f_avg = cell_averages_2d(f_fn, x_edges, t_edges)
    p_avg = cell_averages_1d(p_fn, t_edges)
    gamma_avg = None
    if gamma is not None:
        gamma_avg = cell_averages_1d(as_function(gamma, ("t",)), t_edges)
    return SteklovData(f_avg, p_avg, phi_avg, gamma_avg, R)


def qn_map(g, grid: Grid) -> DiscreteControl:
    """Restriction of a continuous control: ``g_0 = g(0)``, ``g_k`` = mean over cell k."""
    fn = as_function(g, ("t",))
    if isinstance(fn, Samples):
        if fn.knots.size < 10 * grid.n:
            raise ValueError(f"sampled control needs at least {10 * grid.n} samples, got {fn.knots.size}")
        g0 = float(fn.values[0])
    else:
        g0 = float(evaluate(fn, 0.0))
    return DiscreteControl(np.concatenate([[g0], cell_averages_1d(fn, grid.t)]))


def pn_map(gd, grid: Grid) -> PiecewiseLinear:
    """Continuous piecewise-linear control with value ``g_k`` at ``t_k``."""
    values = _control_values(gd)
    if values.size != grid.n + 1:
        raise ValueError("control length does not match the grid")
    return PiecewiseLinear(grid.t, values)


def w21_discrete_norm(gd, grid: Grid) -> float:
    """``sqrt(sum tau g_k^2 + sum tau ((g_k - g_{k-1})/tau)^2)``, sums over k = 1..n."""
    g = _control_values(gd)
    tau = grid.tau
    diff = np.diff(g) / tau
    return math.sqrt(tau * float(g[1:] @ g[1:]) + tau * float(diff @ diff))


def w21_continuous_norm(g: PiecewiseLinear) -> float:
    """Exact W_2^1(0, T) norm of a piecewise-linear function."""
    dt = np.diff(g.knots)
    a, b = g.values[:-1], g.values[1:]
    l2 = np.sum(dt * (a * a + a * b + b * b) / 3.0)
    h1 = np.sum((b - a) ** 2 / dt)
    return math.sqrt(float(l2 + h1))


def project_to_ball(gd, R: float, grid: Grid) -> DiscreteControl:
    """Radial projection onto ``{||g||_{w_2^1} <= R}``."""
    if not R > 0:
        raise ValueError("radius must be positive")
    g = _control_values(gd)
    norm = w21_discrete_norm(g, grid)
    if norm <= R:
        return gd if isinstance(gd, DiscreteControl) else DiscreteControl(g)
    return DiscreteControl(g * (R / norm))
