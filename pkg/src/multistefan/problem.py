"""Continuous problem bundle and its discretization on a uniform grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .discretization import Grid, SteklovData, steklov_averages
from .physics import EnthalpyFunction, MollifiedEnthalpy, PhaseSpec, build_enthalpy, mollify
from .solver import SolverParams


@dataclass(frozen=True, eq=False)
class Problem:
    """Data of the transformed problem on ``(0, L) x (0, T)``.

    ``phi`` is the initial profile in the Kirchhoff variable v; ``f`` a source
    in (x, t); ``p`` the flux at x = L; ``gamma`` the measured trace at x = L
    (only needed for the inverse problem).  Each entry may be a number, a
    polynomial string, a :class:`~multistefan.expressions.PiecewiseLinear` or a
    callable.
    """

    phases: PhaseSpec
    T: float
    L: float
    phi: object = 0.0
    f: object = 0.0
    p: object = 0.0
    gamma: object = None
    R: float = math.inf
    bbar: float | None = None
    _enthalpy: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not (self.T > 0 and self.L > 0):
            raise ValueError("T and L must be positive")
        if not self.R > 0:
            raise ValueError("R must be positive")

    @property
    def enthalpy(self) -> EnthalpyFunction:
        if not self._enthalpy:
            self._enthalpy.append(build_enthalpy(self.phases, self.bbar))
        return self._enthalpy[0]

    def with_gamma(self, gamma) -> "Problem":
        return replace(self, gamma=gamma, _enthalpy=list(self._enthalpy))

    def grid(self, n: int, m: int | None = None) -> Grid:
        return Grid(n, n if m is None else m, self.T, self.L)

    def discretize(self, n: int, m: int | None = None, eps: float | None = None,
                   params: SolverParams | None = None) -> "DiscreteProblem":
        return discretize(self, n, m, eps, params)


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    problem: Problem
    grid: Grid
    sd: SteklovData
    bm: MollifiedEnthalpy
    params: SolverParams

    @property
    def R(self) -> float:
        return self.problem.R

    def with_params(self, params: SolverParams) -> "DiscreteProblem":
        return replace(self, params=params)


def discretize(problem: Problem, n: int, m: int | None = None, eps: float | None = None,
               params: SolverParams | None = None) -> DiscreteProblem:
    """Steklov data, mollified enthalpy (default ``eps = 1/n``) and solver settings."""
    grid = problem.grid(n, m)
    eps = 1.0 / grid.n if eps is None else float(eps)
    sd = steklov_averages(grid, phi=problem.phi, f=problem.f, p=problem.p,
                          gamma=problem.gamma, R=problem.R)
    return DiscreteProblem(problem, grid, sd, mollify(problem.enthalpy, eps),
                           params if params is not None else SolverParams())

