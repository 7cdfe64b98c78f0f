import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multistefan.discretization import Grid, steklov_averages
from multistefan.interpolants import linf_norm
from multistefan.physics import PhaseSpec, build_enthalpy, mollify
from multistefan.problem import Problem, discretize
from multistefan.solver import (DiscreteState, SolverError, SolverParams, contraction_factor,
                                residual_check, scalar_monotone_solve, solve_all, solve_step)
from multistefan.verification import heat_problem

from oracles import linear_two_node_step

TWO_PHASE = PhaseSpec.constant_phases([0.0], [1.0], [1.0, 2.0], [1.0, 1.5])
UNIT_JUMP = PhaseSpec.constant_phases([0.0], [1.0], [1.0, 1.0], [1.0, 1.0])


def linear_bm(alpha=1.0, eps=0.1):
    return mollify(build_enthalpy(PhaseSpec.single_phase(alpha=alpha)), eps)


def two_phase_problem(T=0.1, **data):
    data.setdefault("phi", "0.5 - x")
    return Problem(TWO_PHASE, T, 1.0, **data)


# -- scalar solve ------------------------------------------------------------------


def test_scalar_solve_linear():
    assert scalar_monotone_solve(1.0, 3.0, linear_bm(alpha=2.0)) == pytest.approx(1.0, abs=1e-14)


def test_scalar_solve_small_c():
    assert scalar_monotone_solve(1e-12, 5.0, linear_bm()) == pytest.approx(5.0, abs=1e-9)


def test_scalar_solve_against_bisection_oracle():
    bm = mollify(build_enthalpy(UNIT_JUMP), 1e-3)
    # frozen from oracles.bisect on x + oracles.heaviside_mollified(x, 1e-3) = 0.7
    assert scalar_monotone_solve(1.0, 0.7, bm) == pytest.approx(2.458297487040168e-04, abs=1e-12)


@given(st.floats(1e-6, 1e3), st.floats(-50, 50), st.floats(1e-4, 1.0))
def test_scalar_solve_residual(c, rhs, eps):
    bm = mollify(build_enthalpy(TWO_PHASE), eps)
    x = scalar_monotone_solve(c, rhs, bm)
    # for steep maps the residual cannot drop below slope * (a few ulps of x)
    floor = (1.0 + c * bm.derivative(x)) * 4 * np.spacing(max(1.0, abs(x)))
    assert abs(x + c * bm.value(x) - rhs) <= 1e-14 * max(1.0, abs(rhs)) + floor


def test_scalar_solve_vectorised():
    bm = mollify(build_enthalpy(TWO_PHASE), 0.05)
    rhs = np.linspace(-3, 3, 11)
    x = scalar_monotone_solve(0.5, rhs, bm)
    np.testing.assert_allclose(x + 0.5 * bm.value(x), rhs, atol=1e-13)
    with pytest.raises(ValueError):
        scalar_monotone_solve(0.0, 1.0, bm)


# -- single steps -----------------------------------------------------------------


@pytest.mark.parametrize("mode", ["jacobi", "gauss_seidel", "newton"])
def test_constant_is_fixed_point(mode):
    dp = discretize(two_phase_problem(phi=0.7), 8, 6, params=SolverParams(mode=mode))
    row, rep = solve_step(dp.sd.phi_avg, 1, dp.sd, np.zeros(9), dp.grid, dp.bm, dp.params)
    np.testing.assert_allclose(row, dp.sd.phi_avg, rtol=0, atol=1e-15)
    np.testing.assert_allclose(row, 0.7, rtol=0, atol=1e-14)
    assert rep.iterations == 1


@pytest.mark.parametrize("mode", ["jacobi", "gauss_seidel", "newton"])
def test_linear_single_cell_matches_closed_form(mode):
    grid = Grid(4, 1, 0.5, 0.3)
    sd = steklov_averages(grid, phi="1 - x", f=2.0, p=0.4)
    v_prev = sd.phi_avg
    g = np.array([0.3, -0.5, 0.0, 0.0, 0.0])
    params = SolverParams(mode=mode, tol=1e-13)
    row, _ = solve_step(v_prev, 1, sd, g, grid, linear_bm(), params)
    c = grid.h**2 / grid.tau
    expected = linear_two_node_step(v_prev, c, grid.h, 0.5 * (g[0] + g[1]), 0.4, f0=2.0)
    np.testing.assert_allclose(row, expected, atol=1e-12)


def test_jacobi_matches_newton_two_nodes():
    prob = two_phase_problem(phi="0.3 - x", f="1 - x", p=-0.2)
    out = {}
    for mode in ("jacobi", "newton"):
        dp = discretize(prob, 10, 2, params=SolverParams(mode=mode))
        out[mode] = solve_all(np.full(11, -0.4), dp.sd, dp.grid, dp.bm, dp.params)[0].v
    assert np.max(np.abs(out["jacobi"] - out["newton"])) <= 10 * 1e-10


def test_contraction_monitor():
    dp = discretize(two_phase_problem(), 6, 8, params=SolverParams(mode="jacobi"))
    _, reports = solve_all(np.full(7, -0.5), dp.sd, dp.grid, dp.bm, dp.params)
    delta = contraction_factor(dp.grid, dp.bm.bbar)
    for rep in reports:
        assert rep.delta == delta
        assert rep.contraction_violations() == 0
        assert rep.iterations > 1 and rep.updates[-1] <= rep.tol
        ratios = rep.ratios[rep.updates[:-1] > 1e-14]
        assert np.all(ratios <= delta + 1e-9)


def test_step_failure_carries_step_and_update():
    dp = discretize(two_phase_problem(), 4, 8, params=SolverParams(mode="jacobi", max_iter=1))
    with pytest.raises(SolverError) as info:
        solve_all(np.full(5, -3.0), dp.sd, dp.grid, dp.bm, dp.params)
    assert info.value.step == 1
    assert info.value.last_update > 0


def test_step_rejects_bad_input():
    dp = discretize(two_phase_problem(), 4, 4)
    with pytest.raises(SolverError):
        solve_step(np.full(5, np.nan), 1, dp.sd, np.zeros(5), dp.grid, dp.bm, dp.params)
    with pytest.raises(ValueError):
        solve_step(dp.sd.phi_avg, 5, dp.sd, np.zeros(5), dp.grid, dp.bm, dp.params)
    with pytest.raises(ValueError):
        SolverParams(mode="multigrid")


# -- whole solves ------------------------------------------------------------------


def test_zero_data_zero_state():
    dp = discretize(two_phase_problem(phi=0.0), 5, 7)
    # zero lies on the jump; by symmetry of the mollifier it is still a fixed point
    state, _ = solve_all(np.zeros(6), dp.sd, dp.grid, dp.bm, dp.params)
    np.testing.assert_array_equal(state.v, 0.0)


@pytest.mark.parametrize("c", [-1.3, 0.45, 2.0])
def test_constant_state(c):
    dp = discretize(two_phase_problem(phi=c), 16, 12)
    state, _ = solve_all(np.zeros(17), dp.sd, dp.grid, dp.bm, dp.params)
    assert np.max(np.abs(state.v - c)) <= 1e-12
    assert residual_check(state, dp.sd, np.zeros(17), dp.grid, dp.bm) <= 1e-12


def test_heat_regime_converges():
    prob, exact = heat_problem(T=0.1)
    errs = []
    for n in (8, 32, 128):
        dp = discretize(prob, n, n)
        state, _ = solve_all(np.zeros(n + 1), dp.sd, dp.grid, dp.bm, dp.params)
        errs.append(np.max(np.abs(state.v[-1, :-1] - exact.cell_values(prob.T, dp.grid))))
    assert errs[0] > errs[1] > errs[2]


def test_maximum_principle_heat_regime():
    prob, _ = heat_problem(T=0.1)
    dp = discretize(prob, 64, 64)
    state, _ = solve_all(np.zeros(65), dp.sd, dp.grid, dp.bm, dp.params)
    assert linf_norm(state) <= 1.05


@pytest.mark.parametrize("mode", ["jacobi", "gauss_seidel", "newton"])
def test_residual_after_solve_and_flux_closure(mode):
    prob = two_phase_problem(f="x*t", p="0.5 - t")
    dp = discretize(prob, 12, 10, params=SolverParams(mode=mode))
    g = np.linspace(-1.0, 0.5, 13)
    state, _ = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)
    assert residual_check(state, dp.sd, g, dp.grid, dp.bm) <= 10 * 1e-10
    closure = state.v[1:, -1] - state.v[1:, -2] - dp.grid.h * dp.sd.p_avg
    assert np.max(np.abs(closure)) <= 1e-14


def test_residual_detects_perturbation():
    prob = two_phase_problem()
    dp = discretize(prob, 8, 8)
    g = np.full(9, -0.3)
    state, _ = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)
    v = state.v.copy()
    v[4, 3] += 1.0
    grid = dp.grid
    bound = grid.h * min(1.0, grid.h**2 * dp.bm.bbar / grid.tau) / 2
    assert residual_check(v, dp.sd, g, grid, dp.bm) >= bound


def test_modes_agree_and_solves_are_deterministic():
    # small T keeps the jacobi contraction factor small (about 0.3), so its
    # stopping error stays well below the tolerance
    prob = two_phase_problem(T=0.002, phi="0.2 - x")
    g = np.full(9, -1.0)
    states = {}
    for mode in ("jacobi", "gauss_seidel", "newton"):
        dp = discretize(prob, 8, 16, params=SolverParams(mode=mode))
        states[mode] = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)[0].v
    for mode in ("jacobi", "gauss_seidel"):
        assert np.max(np.abs(states[mode] - states["newton"])) <= 10 * 1e-10
    dp = discretize(prob, 8, 16)
    again = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)[0].v
    assert np.array_equal(again, states["newton"])


def test_reuse_prefix_gives_same_state():
    dp = discretize(two_phase_problem(), 10, 8)
    g = np.full(11, -0.5)
    base, _ = solve_all(g, dp.sd, dp.grid, dp.bm, dp.params)
    g2 = g.copy()
    g2[7:] = -0.8
    fresh, _ = solve_all(g2, dp.sd, dp.grid, dp.bm, dp.params)
    reused, _ = solve_all(g2, dp.sd, dp.grid, dp.bm, dp.params, reuse=(base.v, 7))
    assert np.array_equal(fresh.v, reused.v)


# -- serialisation -----------------------------------------------------------------


def test_binary_round_trip_is_bit_identical(tmp_path):
    dp = discretize(two_phase_problem(), 6, 5)
    state, _ = solve_all(np.full(7, -0.2), dp.sd, dp.grid, dp.bm, dp.params)
    path = tmp_path / "state.bin"
    state.to_binary(path)
    raw = path.read_bytes()
    assert raw[:4] == b"STEF" and len(raw) == 16 + 8 * 7 * 6
    back = DiscreteState.from_binary(path, dp.grid.T, dp.grid.L)
    assert back.v.tobytes() == state.v.tobytes()
    assert back.grid == dp.grid


def test_binary_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        DiscreteState.from_binary(path, 1.0, 1.0)


def test_state_csv(tmp_path):
    dp = discretize(two_phase_problem(), 3, 2)
    state, _ = solve_all(np.zeros(4), dp.sd, dp.grid, dp.bm, dp.params)
    state.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "k,t_k,i=0,i=1,i=2"
    assert len(lines) == 5
    assert [float(x) for x in lines[2].split(",")[2:]] == list(state.v[1])
