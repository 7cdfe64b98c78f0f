"""Exact-solution oracles, front extraction and refinement studies."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

from .control_opt import evaluate_control, surrogate_J
from .discretization import Grid, qn_map
from .interpolants import energy_norm, linf_norm, test_function_library, weak_residual
from .io import fmt
from .physics import PhaseSpec, inverse_kirchhoff
from .problem import Problem, discretize
from .solver import DiscreteState, SolverParams, solve_all


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# heat-equation regime


@dataclass(frozen=True)
class HeatExact:
    """``A exp(-(pi/L)^2 t) cos(pi x / L)`` for unit coefficients and no forcing."""

    L: float
    amplitude: float = 1.0

    def __call__(self, x, t):
        w = math.pi / self.L
        return self.amplitude * np.exp(-w * w * np.asarray(t)) * np.cos(w * np.asarray(x))

    def cell_values(self, t: float, grid: Grid) -> np.ndarray:
        """Exact means over ``[x_i, x_{i+1}]``, i = 0..m-1."""
        w = math.pi / self.L
        e = grid.x
        means = (np.sin(w * e[1:]) - np.sin(w * e[:-1])) / (w * grid.h)
        return self.amplitude * math.exp(-w * w * t) * means


def heat_problem(T: float = 0.1, L: float = 1.0, amplitude: float = 1.0) -> tuple[Problem, HeatExact]:
    exact = HeatExact(L, amplitude)
    return Problem(PhaseSpec.single_phase(), T, L, phi=lambda x: exact(x, 0.0)), exact


# ---------------------------------------------------------------------------
# Neumann two-phase similarity solution


@dataclass(frozen=True)
class NeumannBenchmark:
    """Melting of a half-line: liquid near x = 0, solid beyond the front.

    ``alpha_*`` are volumetric heat capacities, ``k_*`` conductivities,
    ``latent`` the volumetric latent heat; the wall is held at ``u_wall`` above
    the melting temperature ``u_melt`` and the far field starts at
    ``u_init`` below it.  The front is ``xi(t) = 2 lam sqrt(a_l t)``.
    """

    alpha_l: float
    k_l: float
    alpha_s: float
    k_s: float
    latent: float
    u_wall: float
    u_melt: float
    u_init: float
    lam: float = field(init=False)

    def __post_init__(self):
        if min(self.alpha_l, self.k_l, self.alpha_s, self.k_s, self.latent) <= 0:
            raise ConfigurationError("material constants must be positive")
        if not self.u_init <= self.u_melt < self.u_wall:
            raise ConfigurationError("need u_init <= u_melt < u_wall")
        object.__setattr__(self, "lam", self._solve_lambda())

    @property
    def a_l(self) -> float:
        return self.k_l / self.alpha_l

    @property
    def a_s(self) -> float:
        return self.k_s / self.alpha_s

    def balance(self, lam: float) -> float:
        """Latent heat uptake minus net conductive supply at the front (times sqrt t)."""
        r = math.sqrt(self.a_l / self.a_s)
        supply = (self.k_l * (self.u_wall - self.u_melt) * math.exp(-lam * lam)
                  / (math.erf(lam) * math.sqrt(math.pi * self.a_l)))
        # exp(-z^2)/erfc(z) written with the scaled erfc to stay finite for large z
        drain = (self.k_s * (self.u_melt - self.u_init)
                 / (special.erfcx(lam * r) * math.sqrt(math.pi * self.a_s)))
        return self.latent * lam * math.sqrt(self.a_l) - supply + drain

    def _solve_lambda(self) -> float:
        lo, hi = 1e-12, 1.0
        while self.balance(hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise ConfigurationError("could not bracket the similarity root")
        lam = optimize.brentq(self.balance, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return float(lam)

    def front(self, t):
        return 2.0 * self.lam * np.sqrt(self.a_l * np.asarray(t, dtype=float))

    def temperature(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x, t = np.broadcast_arrays(x, t)
        out = np.empty(x.shape)
        pos = t > 0
        xi = self.front(t)
        liquid = pos & (x < xi)
        solid = pos & ~liquid
        zl = x[liquid] / (2 * np.sqrt(self.a_l * t[liquid]))
        out[liquid] = self.u_wall - (self.u_wall - self.u_melt) * special.erf(zl) / math.erf(self.lam)
        zs = x[solid] / (2 * np.sqrt(self.a_s * t[solid]))
        r = math.sqrt(self.a_l / self.a_s)
        out[solid] = self.u_init + (self.u_melt - self.u_init) * special.erfc(zs) / special.erfc(self.lam * r)
        out[~pos] = np.where(x[~pos] > 0, self.u_init, self.u_wall)
        return out

    def phases(self) -> PhaseSpec:
        return PhaseSpec.constant_phases([self.u_melt], [self.latent], [self.alpha_s, self.alpha_l],
                                         [self.k_s, self.k_l])

    def transformed(self, x, t):
        """Kirchhoff variable ``v = k (u - u_melt)`` on each side of the front."""
        u = self.temperature(x, t)
        return np.where(u >= self.u_melt, self.k_l, self.k_s) * (u - self.u_melt)

    def flux(self, x, t):
        """``dv/dx`` away from the front."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        xi = self.front(t)
        zl = x / (2 * np.sqrt(self.a_l * t))
        zs = x / (2 * np.sqrt(self.a_s * t))
        r = math.sqrt(self.a_l / self.a_s)
        dl = (-self.k_l * (self.u_wall - self.u_melt) / math.erf(self.lam) * 2 / math.sqrt(math.pi)
              * np.exp(-zl * zl) / (2 * np.sqrt(self.a_l * t)))
        ds = (-self.k_s * (self.u_melt - self.u_init) / special.erfc(self.lam * r) * 2 / math.sqrt(math.pi)
              * np.exp(-zs * zs) / (2 * np.sqrt(self.a_s * t)))
        return np.where(x < xi, dl, ds)


@dataclass(frozen=True)
class NeumannExact:
    """Benchmark evaluated in problem time ``t`` (similarity time ``t + t0``)."""

    bench: NeumannBenchmark
    t0: float

    def v(self, x, t):
        return self.bench.transformed(x, np.asarray(t) + self.t0)

    def u(self, x, t):
        return self.bench.temperature(x, np.asarray(t) + self.t0)

    def front(self, t):
        return self.bench.front(np.asarray(t) + self.t0)

    def cell_values(self, t: float, grid: Grid) -> np.ndarray:
        """Exact transformed values at the cell centres ``x_i + h/2``."""
        return self.v(grid.x[:-1] + 0.5 * grid.h, t)


def neumann_setup(bench: NeumannBenchmark, L: float, T: float, t0: float,
                  R: float = math.inf) -> tuple[Problem, NeumannExact]:
    """Truncate the similarity solution to ``(0, L) x (0, T)`` starting from time ``t0``.

    The initial profile, both boundary fluxes and the trace at x = L are
    taken from the exact solution; the wall flux is returned as ``g_true`` on
    the exact evaluator's ``g`` attribute via :func:`neumann_control`.
    """
    if not t0 > 0:
        raise ConfigurationError("t0 must be positive (the wall flux is singular at t = 0)")
    if bench.front(T + t0) >= L:
        raise ConfigurationError(f"front reaches x = L before T (xi(T) = {float(bench.front(T + t0)):.4g})")
    exact = NeumannExact(bench, t0)
    problem = Problem(
        bench.phases(), T, L,
        phi=lambda x: exact.v(x, 0.0),
        p=lambda t: float(bench.flux(L, t + t0)),
        gamma=lambda t: float(exact.v(L, t)),
        R=R,
    )
    return problem, exact


def neumann_control(exact: NeumannExact) -> Callable[[float], float]:
    """Exact wall flux ``g(t) = v_x(0, t)``."""
    return lambda t: float(exact.bench.flux(0.0, np.asarray(t) + exact.t0))


# ---------------------------------------------------------------------------
# front extraction


def extract_front(state: DiscreteState, grid: Grid | None = None, level: float = 0.0) -> np.ndarray:
    """First crossing of ``level`` from the left of the nodal piecewise-linear profile.

    Returns one position per time level, NaN where the profile does not cross.
    """
    v = state.v if isinstance(state, DiscreteState) else np.asarray(state)
    grid = state.grid if grid is None else grid
    d = v - level
    out = np.full(v.shape[0], np.nan)
    for k, row in enumerate(d):
        hits = np.nonzero(((row[:-1] > 0) & (row[1:] <= 0)) | ((row[:-1] < 0) & (row[1:] >= 0)))[0]
        if hits.size == 0:
            zeros = np.nonzero(row == 0)[0]
            if zeros.size:
                out[k] = grid.x[zeros[0]]
            continue
        i = hits[0]
        out[k] = grid.x[i] + grid.h * row[i] / (row[i] - row[i + 1])
    return out


# ---------------------------------------------------------------------------
# refinement studies


@dataclass
class StudyReport:
    levels: list[tuple[int, int]]
    h: list[float]
    tau: list[float]
    linf: list[float]
    energy: list[float]
    error: list[float] = field(default_factory=list)
    front_error: list[float] = field(default_factory=list)
    weak: dict[str, list[float]] = field(default_factory=dict)
    jacobi_iterations: int = 0
    contraction_violations: int = 0
    gaps: list[float] = field(default_factory=list)

    def orders(self, values: list[float], steps: list[float]) -> list[float]:
        return [math.log(values[j] / values[j + 1]) / math.log(steps[j] / steps[j + 1])
                for j in range(len(values) - 1)]

    @property
    def spatial_orders(self) -> list[float]:
        return self.orders(self.error, self.h) if self.error else []

    @property
    def temporal_orders(self) -> list[float]:
        return self.orders(self.error, self.tau) if self.error else []

    def to_csv(self, path) -> None:
        names = sorted(self.weak)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "h", "tau", "linf", "energy", "error", "front_error"]
                       + [f"weak[{name}]" for name in names])
            for j, (n, m) in enumerate(self.levels):
                row = [n, m, fmt(self.h[j]), fmt(self.tau[j]), fmt(self.linf[j]), fmt(self.energy[j]),
                       fmt(self.error[j]) if self.error else "", fmt(self.front_error[j]) if self.front_error else ""]
                w.writerow(row + [fmt(self.weak[name][j]) for name in names])

    def audit(self) -> list[str]:
        """Failed checks (empty when every audit passes)."""
        fails = []
        if max(self.linf) > 1.05 * self.linf[0]:
            fails.append(f"l-infinity norm grew by more than 5% ({self.linf[0]:.6g} -> {max(self.linf):.6g})")
        if max(self.energy) > 1.5 * self.energy[0]:
            fails.append(f"energy norm exceeded 1.5x its coarsest value ({max(self.energy):.6g})")
        for name, res in self.weak.items():
            for j in range(len(res) - 1):
                (n0, m0), (n1, m1) = self.levels[j], self.levels[j + 1]
                if n1 < 4 * n0 or m1 < 4 * m0:
                    continue  # the halving check applies to 4x refinement in both directions
                if abs(res[j + 1]) > 0.5 * abs(res[j]) and abs(res[j]) > 1e-13:
                    fails.append(f"weak residual for {name!r} did not halve between levels {j} and {j + 1}")
        if self.contraction_violations:
            fails.append(f"{self.contraction_violations} contraction violations")
        if self.error and any(b >= a for a, b in zip(self.error, self.error[1:])):
            fails.append("error did not decrease under refinement")
        if self.front_error and any(b >= a for a, b in zip(self.front_error, self.front_error[1:])):
            fails.append("front error did not decrease under refinement")
        return fails

    def summary(self) -> str:
        lines = ["level      n      m        linf      energy       error  front_error"]
        for j, (n, m) in enumerate(self.levels):
            err = f"{self.error[j]:.4e}" if self.error else "-"
            fe = f"{self.front_error[j]:.4e}" if self.front_error else "-"
            lines.append(f"{j:5d} {n:6d} {m:6d} {self.linf[j]:11.6g} {self.energy[j]:11.6g} {err:>11} {fe:>12}")
        if self.error:
            lines.append("spatial orders: " + ", ".join(f"{o:.3f}" for o in self.spatial_orders))
            lines.append("temporal orders: " + ", ".join(f"{o:.3f}" for o in self.temporal_orders))
        for name, res in sorted(self.weak.items()):
            lines.append(f"weak residual {name}: " + ", ".join(f"{r:.3e}" for r in res))
        lines.append(f"jacobi iterations {self.jacobi_iterations}, contraction violations "
                     f"{self.contraction_violations}")
        fails = self.audit()
        lines.append("audits: " + ("all passed" if not fails else "; ".join(fails)))
        return "\n".join(lines)


def _solve_level(problem: Problem, n: int, m: int, params: SolverParams, control, eps):
    dp = discretize(problem, n, m, eps=eps, params=params)
    g = qn_map(control, dp.grid).g
    state, reports = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)
    return dp, g, state, reports


def refinement_study(problem: Problem, family, params: SolverParams = SolverParams(), *,
                     control=0.0, exact=None, front_level: float | None = None,
                     weak: bool = True, eps_rule: Callable[[int], float] | None = None,
                     workers: int = 1) -> StudyReport:
    """Solve on every ``(n, m)`` of ``family`` and collect norms, errors and residuals.

    ``exact`` (optional) provides ``cell_values(t, grid)`` for the final-time
    error and ``front(t)`` for the front error at level ``front_level``.
    """
    family = [tuple(map(int, lv)) for lv in family]
    if len(family) < 3:
        raise ValueError("a refinement study needs at least 3 grid levels")
    eps_rule = eps_rule or (lambda n: 1.0 / n)

    def run(level):
        n, m = level
        return _solve_level(problem, n, m, params, control, eps_rule(n))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, family))

    report = StudyReport(family, [], [], [], [])
    library = test_function_library(problem.T, problem.L) if weak else []
    for dp, g, state, reports in results:
        grid = dp.grid
        report.h.append(grid.h)
        report.tau.append(grid.tau)
        report.linf.append(linf_norm(state))
        report.energy.append(energy_norm(state, grid))
        if params.mode == "jacobi":
            report.jacobi_iterations += sum(r.iterations for r in reports)
            report.contraction_violations += sum(r.contraction_violations() for r in reports)
        if exact is not None:
            report.error.append(float(np.max(np.abs(state.v[-1, :-1] - exact.cell_values(problem.T, grid)))))
            if front_level is not None:
                xf = extract_front(state, grid, front_level)[1:]
                report.front_error.append(float(np.max(np.abs(xf - exact.front(grid.t[1:])))))
        for psi in library:
            report.weak.setdefault(psi.name, []).append(abs(weak_residual(state, psi, dp.bm, problem, g)))
    return report


@dataclass
class FunctionalStudy:
    ns: list[int]
    values: list[float]
    reference: float
    gaps: list[float]

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))


def functional_convergence_study(g, ns, problem: Problem, r: int = 4,
                                 params: SolverParams = SolverParams()) -> FunctionalStudy:
    """Gaps ``|I_n(Q_n g) - J~(g)|`` where ``J~`` is the cost on an r-times refined finest grid."""
    ns = [int(n) for n in ns]
    if len(ns) < 3:
        raise ValueError("need at least 3 values of n")
    reference = surrogate_J(g, r, problem, max(ns), params=params)
    values = []
    for n in ns:
        dp = discretize(problem, n, params=params)
        values.append(evaluate_control(qn_map(g, dp.grid), dp)[0])
    return FunctionalStudy(ns, values, reference, [abs(v - reference) for v in values])


def temperature_error(state: DiscreteState, exact: NeumannExact, phases: PhaseSpec, k: int) -> float:
    """Max temperature error at level k, comparing at cell centres."""
    grid = state.grid
    xc = grid.x[:-1] + 0.5 * grid.h
    u_num = inverse_kirchhoff(state.v[k, :-1], phases)
    return float(np.max(np.abs(u_num - exact.u(xc, grid.t[k]))))
