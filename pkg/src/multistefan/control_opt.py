"""Discrete cost functional and a projected compass search over the control ball."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretization import (DiscreteControl, _control_values, project_to_ball, qn_map,
                             w21_discrete_norm)
from .io import fmt
from .problem import DiscreteProblem, Problem, discretize
from .solver import DiscreteState, SolverParams, solve_all

BALL_SLACK = 1e-12


class ControlOutsideBall(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerParams:
    """Compass-search settings.

    The coordinate step starts at ``initial_step * R / sqrt(n)`` and is
    multiplied by ``shrink`` after every unsuccessful sweep; the search stops
    once it falls below ``min_step * R / sqrt(n)`` or after ``max_evals``
    cost evaluations.  ``restarts`` reruns the search from the incumbent with
    the initial step.
    """

    max_evals: int = 5000
    initial_step: float = 0.25
    shrink: float = 0.5
    min_step: float = 1e-7
    restarts: int = 0
    seed: int = 0
    pattern_moves: bool = True
    remove_null_mode: bool = True

    def __post_init__(self):
        if self.max_evals < 1 or self.restarts < 0:
            raise ValueError("max_evals must be >= 1 and restarts >= 0")
        if not (self.initial_step > 0 and self.min_step > 0):
            raise ValueError("step sizes must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class OptimizationTrace:
    values: list[float] = field(default_factory=list)
    norms: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    best: DiscreteControl | None = None
    best_value: float = math.inf
    stop_reason: str = ""

    @property
    def evaluations(self) -> int:
        return len(self.values)

    def incumbents(self) -> np.ndarray:
        """Best value after each evaluation."""
        return np.minimum.accumulate(np.asarray(self.values)) if self.values else np.empty(0)

    def record(self, value: float, norm: float, accepted: bool) -> None:
        self.values.append(float(value))
        self.norms.append(float(norm))
        self.accepted.append(bool(accepted))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval", "I_n", "norm", "accepted"])
            for j, (val, nrm, acc) in enumerate(zip(self.values, self.norms, self.accepted)):
                w.writerow([j, fmt(val), fmt(nrm), int(acc)])


def cost_In(state: DiscreteState | np.ndarray, sd, grid) -> float:
    """``sum_{k=1..n} tau (v_m(k) - Gamma_k)^2``."""
    v = state.v if isinstance(state, DiscreteState) else np.asarray(state)
    if sd.gamma_avg is None:
        raise ValueError("measurement averages are missing")
    if v.shape != (grid.n + 1, grid.m + 1) or sd.gamma_avg.shape != (grid.n,):
        raise ValueError("shapes are inconsistent with the grid")
    r = v[1:, -1] - sd.gamma_avg
    return float(grid.tau * (r @ r))


def _check_ball(g: np.ndarray, dp: DiscreteProblem) -> float:
    norm = w21_discrete_norm(g, dp.grid)
    if norm > dp.R + BALL_SLACK:
        raise ControlOutsideBall(f"control norm {norm:.17g} exceeds R = {dp.R:.17g}")
    return norm


def evaluate_control(gd, dp: DiscreteProblem) -> tuple[float, DiscreteState]:
    """Solve for ``gd`` (which must lie in the ball) and return ``(I_n, state)``."""
    g = _control_values(gd)
    _check_ball(g, dp)
    state, _ = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)
    return cost_In(state, dp.sd, dp.grid), state


def surrogate_J(g, r: int, problem: Problem, n: int, m: int | None = None,
                params: SolverParams | None = None) -> float:
    """Stand-in for the continuous cost: ``I_{rn}(Q_{rn} g)`` on an r-times finer grid."""
    if r < 4:
        raise ValueError("refinement factor must be at least 4")
    m = n if m is None else m
    fine = discretize(problem, r * n, r * m, params=params)
    return evaluate_control(qn_map(g, fine.grid), fine)[0]


def _averages(g: np.ndarray) -> np.ndarray:
    return 0.5 * (g[1:] + g[:-1])


def null_mode_projector(grid) -> Callable[[np.ndarray], np.ndarray]:
    """Orthogonal projection, in the discrete w_2^1 inner product, that removes the
    alternating vector ``((-1)^k)``.

    The state depends on the control only through the means
    ``(g_{k-1} + g_k)/2``, so the alternating vector spans the null space of
    the cost; the projection picks the smallest-norm control among those with
    equal means.
    """
    n, tau = grid.n, grid.tau
    a = (-1.0) ** np.arange(n + 1)

    def inner(x, y):
        dx, dy = np.diff(x) / tau, np.diff(y) / tau
        return tau * float(x[1:] @ y[1:]) + tau * float(dx @ dy)

    aa = inner(a, a)
    return lambda g: g - (inner(g, a) / aa) * a


class _Evaluator:
    """Cost evaluation that reuses the unchanged leading time levels of the incumbent."""

    def __init__(self, dp: DiscreteProblem, trace: OptimizationTrace, max_evals: int,
                 cost: Callable | None):
        self.dp = dp
        self.trace = trace
        self.max_evals = max_evals
        self.cost = cost
        self.g = None
        self.value = math.inf
        self.state = None

    @property
    def exhausted(self) -> bool:
        return self.trace.evaluations >= self.max_evals

    def evaluate(self, g: np.ndarray):
        norm = _check_ball(g, self.dp)
        if self.cost is not None:
            return float(self.cost(g)), None, norm
        reuse = None
        if self.state is not None:
            # level k only sees the mean (g_{k-1} + g_k)/2
            a_new, a_old = _averages(g), _averages(self.g)
            changed = np.nonzero(np.abs(a_new - a_old) > 1e-14 * (1.0 + np.abs(a_old)))[0]
            reuse = (self.state.v, int(changed[0]) + 1 if changed.size else self.dp.grid.n + 1)
        state, _ = solve_all(g, self.dp.sd, self.dp.grid, self.dp.bm, self.dp.params, reuse=reuse)
        return cost_In(state, self.dp.sd, self.dp.grid), state, norm

    def try_point(self, g: np.ndarray) -> bool:
        value, state, norm = self.evaluate(g)
        ok = value < self.value
        self.trace.record(value, norm, ok)
        if ok:
            self.g, self.value, self.state = g, value, state
        return ok


def minimize(initial, dp: DiscreteProblem, params: OptimizerParams = OptimizerParams(),
             cost: Callable | None = None) -> OptimizationTrace:
    """Projected compass search for ``min I_n`` over the ball of radius R.

    Polls the n+1 coordinate directions in a seeded random order, accepting the
    first improvement (each trial is radially projected onto the ball).  After
    a sweep that improved the incumbent, one extrapolation step along the
    sweep's net displacement is tried.  ``cost`` replaces the state-based cost,
    e.g. by a quadratic test function.
    """
    grid = dp.grid
    R = dp.R
    g0 = project_to_ball(_control_values(initial), R, grid).g if math.isfinite(R) else \
        np.array(_control_values(initial), dtype=float)
    scale = (R if math.isfinite(R) else max(1.0, w21_discrete_norm(g0, grid))) / math.sqrt(grid.n)
    rng = np.random.default_rng(params.seed)
    trace = OptimizationTrace()
    ev = _Evaluator(dp, trace, params.max_evals, cost)
    ev.try_point(np.array(g0, dtype=float))

    remove_null = (null_mode_projector(grid) if params.remove_null_mode and cost is None
                   else (lambda g: g))

    def project(g):
        g = remove_null(g)
        return project_to_ball(g, R, grid).g if math.isfinite(R) else g

    if params.remove_null_mode and cost is None:
        ev.try_point(np.array(project(ev.g)))

    reason = "max_evals"
    for _ in range(params.restarts + 1):
        step = params.initial_step * scale
        while not ev.exhausted:
            start = ev.g
            improved = False
            for j in rng.permutation(grid.n + 1):
                for sign in (1.0, -1.0):
                    if ev.exhausted:
                        break
                    trial = ev.g.copy()
                    trial[j] += sign * step
                    if ev.try_point(np.array(project(trial))):
                        improved = True
                        break
            if ev.exhausted:
                break
            if improved:
                if params.pattern_moves:
                    while not ev.exhausted:
                        d = ev.g - start
                        start = ev.g
                        if not ev.try_point(np.array(project(ev.g + d))):
                            break
                continue
            step *= params.shrink
            if step < params.min_step * scale:
                reason = "step"
                break
        if ev.exhausted:
            reason = "max_evals"
            break
    trace.best = DiscreteControl(ev.g)
    trace.best_value = ev.value
    trace.stop_reason = reason
    return trace
