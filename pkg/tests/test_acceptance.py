"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The lines are printed at the end of the pytest run (see ``conftest.py``).
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from multistefan.control_opt import OptimizerParams, evaluate_control, minimize
from multistefan.discretization import Grid, pn_map, project_to_ball, qn_map, w21_continuous_norm, w21_discrete_norm
from multistefan.expressions import PiecewiseLinear, Samples
from multistefan.interpolants import tau_hat_gap, tilde_tau_gap
from multistefan.physics import PhaseSpec
from multistefan.problem import Problem, discretize
from multistefan.solver import DiscreteState, SolverParams, contraction_factor, solve_all
from multistefan.verification import (NeumannBenchmark, functional_convergence_study, heat_problem,
                                      neumann_control, neumann_setup, refinement_study, temperature_error)

from conftest import ACCEPTANCE

TWO_PHASE = PhaseSpec.constant_phases([0.0], [1.0], [1.0, 2.0], [1.0, 1.5])
NEUMANN = NeumannBenchmark(1.0, 1.0, 1.5, 1.2, 2.0, 1.0, 0.0, -0.5)
TOL = SolverParams().tol


def record(k, passed, detail):
    ACCEPTANCE[k] = (bool(passed), detail)
    assert passed, detail


def solve(dp, g):
    g = g.g if hasattr(g, "g") else np.asarray(g, float)
    return solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)


# -- 1: constant solutions ------------------------------------------------------------


def test_c01_constant_solution_exactness():
    start = time.perf_counter()
    worst = 0.0
    for n, m in [(1, 1), (4, 7), (16, 16), (50, 20), (128, 128)]:
        for c in (-1.3, 0.7):  # both sit away from the jump at zero
            dp = discretize(Problem(TWO_PHASE, 1.0, 1.0, phi=c), n, m)
            state, _ = solve(dp, np.zeros(n + 1))
            worst = max(worst, float(np.max(np.abs(state.v - c))))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-12 and elapsed < 1.0, f"max deviation {worst:.2e}, {elapsed:.2f} s")


# -- 2: jacobi contraction -------------------------------------------------------------


def test_c02_jacobi_contraction_bound():
    iterations = violations = 0
    cases = [(TWO_PHASE, "0.5 - x", -1.0, 8, 16, 0.5), (TWO_PHASE, "0.2 - x*x", "-1 + 2*t", 12, 24, 0.3),
             (PhaseSpec.single_phase(alpha=2.0), "x*(1 - x)", 0.5, 10, 20, 1.0)]
    for phases, phi, g, n, m, T in cases:
        prob = Problem(phases, T, 1.0, phi=phi, f="1 - x", p=0.2)
        dp = discretize(prob, n, m, params=SolverParams(mode="jacobi", max_iter=200_000))
        delta = contraction_factor(dp.grid, dp.bm.bbar)
        _, reports = solve(dp, qn_map(g, dp.grid))
        for rep in reports:
            assert rep.delta == delta
            iterations += rep.iterations
            violations += rep.contraction_violations(1e-12)
    record(2, iterations >= 10_000 and violations == 0,
           f"{iterations} jacobi iterations, {violations} violations")


# -- 3: jacobi against newton ----------------------------------------------------------


def test_c03_jacobi_matches_newton():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        alpha = rng.uniform(0.5, 2.0, 2)
        k = rng.uniform(0.5, 2.0, 2)
        latent = rng.uniform(0.2, 2.0)
        phases = PhaseSpec.constant_phases([0.0], [latent], list(alpha), list(k))
        a, b = rng.uniform(-1, 1, 2)
        prob = Problem(phases, rng.uniform(0.0005, 0.002), 1.0, phi=f"{a:.6f} - {abs(b) + 0.2:.6f}*x",
                       f=f"{rng.uniform(-1, 1):.6f}", p=float(rng.uniform(-0.5, 0.5)))
        g = rng.uniform(-2, 1, 33)
        out = {}
        for mode in ("jacobi", "newton"):
            dp = discretize(prob, 32, 32, params=SolverParams(mode=mode, max_iter=100_000))
            out[mode] = solve(dp, g)[0].v
        worst = max(worst, float(np.max(np.abs(out["jacobi"] - out["newton"]))))
    record(3, worst <= 10 * TOL, f"max sup-norm difference {worst:.2e} (limit {10 * TOL:.0e})")


# -- 4: heat regime --------------------------------------------------------------------


def test_c04_heat_regime_orders():
    start = time.perf_counter()
    prob, exact = heat_problem()
    report = refinement_study(prob, [(16, 16), (64, 32), (256, 64)], exact=exact, weak=False, workers=3)
    elapsed = time.perf_counter() - start
    sp, tp = report.spatial_orders, report.temporal_orders
    ok = all(o >= 1.8 for o in sp) and all(o >= 0.9 for o in tp) and elapsed < 30
    record(4, ok, "spatial " + ", ".join(f"{o:.3f}" for o in sp) + "; temporal "
           + ", ".join(f"{o:.3f}" for o in tp) + f"; {elapsed:.1f} s")


# -- 5: Neumann benchmark --------------------------------------------------------------


def test_c05_neumann_benchmark():
    start = time.perf_counter()
    prob, exact = neumann_setup(NEUMANN, 1.0, 0.5, 0.01)
    control = neumann_control(exact)
    temp_errors, front_ratio = [], None
    for n in (32, 64, 128):
        dp = discretize(prob, n, n)
        state, _ = solve(dp, qn_map(control, dp.grid))
        temp_errors.append(max(temperature_error(state, exact, prob.phases, k) for k in range(1, n + 1)))
        if n == 128:
            report = refinement_study(prob, [(32, 32), (64, 64), (128, 128)], control=control,
                                      exact=exact, front_level=0.0, weak=False, workers=3)
            front_ratio = report.front_error[-1] / report.h[-1]
    elapsed = time.perf_counter() - start
    ok = front_ratio <= 5 and temp_errors[0] > temp_errors[1] > temp_errors[2] and elapsed < 120
    record(5, ok, f"front error {front_ratio:.2f} h; temperature errors "
           + ", ".join(f"{e:.3g}" for e in temp_errors) + f"; {elapsed:.1f} s")


# -- 6, 7, 8: refinement audits for fixed data -----------------------------------------


@pytest.fixture(scope="module")
def fixed_data_study():
    prob = Problem(TWO_PHASE, 0.2, 1.0, phi="0.5 - x", f="1 - x", p=0.0)
    return refinement_study(prob, [(32, 32), (64, 64), (128, 128), (256, 256)], control=-1.0, workers=4)


def test_c06_linf_growth(fixed_data_study):
    linf = fixed_data_study.linf
    growth = max(linf) / linf[0] - 1
    record(6, growth <= 0.05, "l-infinity " + ", ".join(f"{v:.5f}" for v in linf) + f"; growth {growth:.2%}")


def test_c07_energy_bound(fixed_data_study):
    energy = fixed_data_study.energy
    ratio = max(energy) / energy[0]
    record(7, ratio <= 1.5, "energy " + ", ".join(f"{v:.5f}" for v in energy) + f"; max ratio {ratio:.3f}")


def test_c08_weak_residual(fixed_data_study):
    worst = 0.0
    for res in fixed_data_study.weak.values():
        for coarse, fine in zip(res, res[2:]):  # levels two apart differ by 4x in n and m
            worst = max(worst, abs(fine) / abs(coarse))
    record(8, worst <= 0.5, f"{len(fixed_data_study.weak)} test functions; worst ratio per 4x refinement {worst:.3f}")


# -- 9: mapping inequalities -----------------------------------------------------------


def random_piecewise_linear(rng, pieces=6):
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, pieces - 1)), [1.0]])
    return PiecewiseLinear(knots, rng.standard_normal(pieces + 1))


def derivative_sq_on(g, a, b):
    lo = np.clip(g.knots[:-1], a, b)
    hi = np.clip(g.knots[1:], a, b)
    return float(np.sum(g.slopes() ** 2 * (hi - lo)))


def random_ball_control(rng, grid, R):
    if rng.random() < 0.5:  # smooth: restriction of a random piecewise-linear function
        raw = qn_map(random_piecewise_linear(rng), grid).g
    else:  # rough: independent nodal values
        raw = rng.standard_normal(grid.n + 1)
    return project_to_ball(raw * rng.uniform(0.2, 3.0), R, grid).g


def p_gap(gd, grid):
    return w21_continuous_norm(pn_map(gd, grid)) ** 2 - w21_discrete_norm(gd, grid) ** 2


def test_c09_mapping_inequalities():
    rng = np.random.default_rng(9)
    R = 2.0
    q_violations = p_violations = 0
    # the constant in the expansion bound is fitted once, on the coarsest grid
    coarse = Grid(4, 1, 1.0, 1.0)
    fit = [p_gap(random_ball_control(rng, coarse, R), coarse) / math.sqrt(coarse.tau) for _ in range(200)]
    C = max(max(fit), 0.0)
    for n in (4, 16, 64):
        grid = Grid(n, 1, 1.0, 1.0)
        for _ in range(20):
            g = random_piecewise_linear(rng)
            lhs = w21_discrete_norm(qn_map(g, grid), grid) ** 2
            rhs = w21_continuous_norm(g) ** 2 + derivative_sq_on(g, 0.0, grid.tau)
            q_violations += lhs > rhs + 1e-10
            gd = random_ball_control(rng, grid, R)
            p_violations += p_gap(gd, grid) > C * math.sqrt(grid.tau) + 1e-10
    record(9, q_violations == 0 and p_violations == 0,
           f"restriction violations {q_violations}, expansion violations {p_violations} (fitted C = {C:.3f})")


# -- 10: convergence of the functional -------------------------------------------------


def test_c10_functional_convergence():
    start = time.perf_counter()
    single = PhaseSpec.single_phase()
    probe = Problem(single, 1.0, 0.5, phi=0.0, p=0.0, gamma="t", R=2.0)
    controls = [0.0, "-1", "-t", lambda t: -0.5 * math.sin(math.pi * t), lambda t: -abs(t - 0.5)]
    decreasing = [functional_convergence_study(g, [8, 16, 32], probe).decreasing for g in controls]

    # a target that no admissible control reaches, so the optimum stays away from zero
    prob = Problem(single, 1.0, 0.5, phi=0.0, p=0.0, gamma="1", R=1.0)
    best, prev, prev_grid = [], None, None
    for j, n in enumerate((8, 16, 32, 64)):
        dp = discretize(prob, n)
        initial = np.zeros(n + 1) if prev is None else qn_map(prev, dp.grid)
        params = OptimizerParams(max_evals=2000, initial_step=0.25 if j == 0 else 0.05)
        trace = minimize(initial, dp, params)
        best.append(trace.best_value)
        prev, prev_grid = pn_map(trace.best, dp.grid), dp.grid
    gaps = np.abs(np.diff(best))
    elapsed = time.perf_counter() - start
    ok = all(decreasing) and all(b < a for a, b in zip(gaps, gaps[1:])) and elapsed < 600
    record(10, ok, f"gap sequences decreasing {sum(decreasing)}/5; I_n* " + ", ".join(f"{v:.5f}" for v in best)
           + "; gaps " + ", ".join(f"{v:.4f}" for v in gaps) + f"; {elapsed:.0f} s")


# -- 11: flux recovery -----------------------------------------------------------------


def test_c11_flux_recovery():
    start = time.perf_counter()
    phases = PhaseSpec.constant_phases([0.0], [1.0], [1.0, 1.0], [1.0, 1.0])
    g_true = lambda t: -2.0 * np.sin(np.pi * t / 2)  # noqa: E731
    base = Problem(phases, 1.0, 0.2, phi=-0.2, p=0.0)
    n = 32
    fine = discretize(base, 4 * n)
    fine_state, _ = solve(fine, qn_map(g_true, fine.grid))
    coarse_grid = base.grid(n)
    target = qn_map(g_true, coarse_grid)
    R = 1.05 * w21_discrete_norm(target, coarse_grid)
    prob = replace(base.with_gamma(Samples(fine.grid.t, fine_state.trace)), R=R)
    dp = discretize(prob, n)
    zero, _ = evaluate_control(np.zeros(n + 1), dp)
    trace = minimize(np.zeros(n + 1), dp, OptimizerParams(max_evals=8000, seed=0))
    diff = pn_map(trace.best.g - target.g, dp.grid)
    ref = pn_map(target, dp.grid)
    rel = math.sqrt(_l2_sq(diff) / _l2_sq(ref))
    elapsed = time.perf_counter() - start
    ratio = trace.best_value / zero
    ok = ratio <= 1e-4 and rel <= 0.10 and elapsed < 600
    record(11, ok, f"I_n/I_n(0) = {ratio:.2e}; relative L2 distance {rel:.2%}; {elapsed:.0f} s")


def _l2_sq(g: PiecewiseLinear) -> float:
    dt = np.diff(g.knots)
    a, b = g.values[:-1], g.values[1:]
    return float(np.sum(dt * (a * a + a * b + b * b) / 3.0))


# -- 12: interpolant identities --------------------------------------------------------


def test_c12_interpolant_identities():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(50):
        n, m = rng.integers(1, 40, 2)
        grid = Grid(int(n), int(m), float(rng.uniform(0.1, 3)), float(rng.uniform(0.1, 3)))
        state = DiscreteState(rng.standard_normal((n + 1, m + 1)) * rng.uniform(0.1, 10), grid)
        for lhs, rhs in (tau_hat_gap(state), tilde_tau_gap(state)):
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    record(12, worst <= 1e-12, f"worst relative disagreement {worst:.2e} over 50 random states")
