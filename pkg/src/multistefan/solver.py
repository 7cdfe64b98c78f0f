"""Implicit finite-difference solution of the mollified enthalpy problem.

Every time level k solves the nonlinear tridiagonal system

    v_0 + c b(v_0) - v_1                 = c b(v_0(k-1)) + h^2 f_0k - h g_k^n
    -v_{i-1} + 2 v_i + c b(v_i) - v_{i+1} = c b(v_i(k-1)) + h^2 f_ik      (0 < i < m)
    -v_{m-1} + v_m                       = h p_k

with ``c = h^2/tau``, ``b`` the mollified enthalpy and ``g_k^n`` the cell mean of
the piecewise-linear control.  The reference method is the Jacobi-type
successive approximation (one monotone scalar equation per node, neighbours
frozen), whose sweep-to-sweep differences contract at least by
``delta = (1 + h^2 bbar / (4 tau))^-1``.  Red-black Gauss-Seidel and damped
Newton are faster alternatives.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .discretization import DiscreteControl, Grid, SteklovData, _control_values
from .io import fmt
from .physics import MollifiedEnthalpy

MODES = ("jacobi", "gauss_seidel", "newton")
BINARY_MAGIC = b"STEF"


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, last_update: float | None = None):
        super().__init__(message)
        self.step = step
        self.last_update = last_update


@dataclass(frozen=True)
class SolverParams:
    """Stopping rule: sweep (or Newton) update ``<= tol * (1 + |v(k-1)|_inf)``;
    the scaling is dropped with ``relative_tol=False``."""

    tol: float = 1e-10
    max_iter: int = 200_000
    scalar_tol: float = 1e-14
    mode: str = "newton"
    relative_tol: bool = True

    def __post_init__(self):
        if not (self.tol > 0 and self.scalar_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def effective_tol(self, v_prev: np.ndarray) -> float:
        if self.relative_tol:
            return self.tol * (1.0 + float(np.max(np.abs(v_prev))))
        return self.tol


@dataclass
class StepReport:
    step: int
    mode: str
    iterations: int
    updates: np.ndarray  # A_0, A_1, ... (sup-norm of successive differences)
    delta: float
    residual: float
    tol: float

    @property
    def ratios(self) -> np.ndarray:
        a = self.updates
        if a.size < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return a[1:] / a[:-1]

    def contraction_violations(self, slack: float = 1e-12) -> int:
        a = self.updates
        return int(np.sum(a[1:] > self.delta * a[:-1] + slack))


@dataclass(eq=False)
class DiscreteState:
    """``v[k, i] = v_i(k)`` for k = 0..n, i = 0..m."""

    v: np.ndarray
    grid: Grid
    reports: list[StepReport] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.v.shape != (self.grid.n + 1, self.grid.m + 1):
            raise ValueError("state shape does not match grid")

    @property
    def trace(self) -> np.ndarray:
        """Right-boundary values ``v_m(k)``, k = 0..n."""
        return self.v[:, -1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k"] + [f"i={i}" for i in range(self.grid.m + 1)])
            for k, row in enumerate(self.v):
                w.writerow([k, fmt(self.grid.t[k])] + [fmt(x) for x in row])

    def to_binary(self, path) -> None:
        header = BINARY_MAGIC + struct.pack("<II", self.grid.n, self.grid.m) + b"\0" * 4
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.v, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path, T: float, L: float) -> "DiscreteState":
        raw = Path(path).read_bytes()
        if len(raw) < 16 or raw[:4] != BINARY_MAGIC:
            raise ValueError("not a state dump (bad magic)")
        n, m = struct.unpack("<II", raw[4:12])
        body = np.frombuffer(raw, dtype="<f8", offset=16)
        if body.size != (n + 1) * (m + 1):
            raise ValueError("state dump is truncated")
        return cls(body.reshape(n + 1, m + 1).astype(float), Grid(n, m, T, L))


def contraction_factor(grid: Grid, bbar: float) -> float:
    return 1.0 / (1.0 + grid.h**2 / (2.0 * grid.tau) * (bbar / 2.0))


def scalar_monotone_solve(c, rhs, bm: MollifiedEnthalpy, x0=None, scalar_tol: float = 1e-14,
                          maxiter: int = 200):
    """Solve ``x + c * b_eps(x) = rhs`` elementwise (c > 0).

    The left side is increasing with slope >= 1, so one evaluation at ``x0``
    yields a bracket; safeguarded Newton steps then fall back to bisection
    whenever they leave it.
    """
    c = np.asarray(c, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    shape = np.broadcast_shapes(c.shape, rhs.shape)
    c = np.broadcast_to(c, shape).ravel()
    r = np.broadcast_to(rhs, shape).ravel()
    if np.any(c <= 0):
        raise ValueError("c must be positive")
    x = r.copy() if x0 is None else np.broadcast_to(np.asarray(x0, float), shape).ravel().copy()
    stop = scalar_tol * np.maximum(1.0, np.abs(r))
    bv, bd = bm.value_and_derivative(x)
    phi = x + c * bv - r
    slack = 1e-12 * (np.abs(phi) + np.abs(x)) + 1e-300
    lo = np.where(phi > 0, x - phi - slack, x)
    hi = np.where(phi > 0, x, x - phi + slack)
    done = np.abs(phi) <= stop
    for _ in range(maxiter):
        if done.all():
            break
        act = ~done
        xa = x[act]
        newton = xa - phi[act] / (1.0 + c[act] * bd[act])
        la, ha = lo[act], hi[act]
        bad = ~((newton > la) & (newton < ha)) | ~np.isfinite(newton)
        xn = np.where(bad, 0.5 * (la + ha), newton)
        bva, bda = bm.value_and_derivative(xn)
        pa = xn + c[act] * bva - r[act]
        lo[act] = np.where(pa <= 0, np.maximum(la, xn), la)
        hi[act] = np.where(pa >= 0, np.minimum(ha, xn), ha)
        x[act], phi[act], bd[act] = xn, pa, bda
        collapsed = (hi[act] - lo[act]) <= 4e-16 * np.maximum(1.0, np.abs(xn))
        done[act] = (np.abs(pa) <= stop[act]) | collapsed | (pa == 0)
    else:
        if not done.all():
            raise SolverError("scalar monotone solve did not converge")
    return x.reshape(shape) if shape else float(x[0])


class _StepSystem:
    """Right-hand side and residual of one time level (internal)."""

    def __init__(self, v_prev, k, sd: SteklovData, g_flux: float, grid: Grid, bm: MollifiedEnthalpy):
        m = grid.m
        h = grid.h
        self.m, self.h = m, h
        self.c = h * h / grid.tau
        self.bm = bm
        self.p = float(sd.p_avg[k - 1])
        rhs = self.c * bm.value(v_prev[:m]) + h * h * sd.f_avg[k - 1]
        rhs[0] -= h * g_flux
        self.rhs = rhs
        self.diag = np.full(m, 2.0)
        self.diag[0] = 1.0

    def neighbours(self, v):
        nb = np.empty(self.m)
        nb[0] = v[1]
        if self.m > 1:
            nb[1:] = v[:-2][:self.m - 1] + v[2:]
        return nb

    def residual(self, v, bv=None):
        m = self.m
        if bv is None:
            bv = self.bm.value(v[:m])
        res = np.empty(m + 1)
        res[:m] = self.diag * v[:m] + self.c * bv - self.neighbours(v) - self.rhs
        res[m] = v[m] - v[m - 1] - self.h * self.p
        return res

    def node_solve(self, idx, v, scalar_tol):
        """Solve the equations of nodes ``idx`` with neighbours taken from ``v``."""
        a = self.diag[idx]
        rhs = (self.rhs[idx] + self.neighbours(v)[idx]) / a
        return scalar_monotone_solve(self.c / a, rhs, self.bm, x0=v[idx], scalar_tol=scalar_tol)


def solve_step(v_prev, k: int, sd: SteklovData, gd, grid: Grid, bm: MollifiedEnthalpy,
               params: SolverParams = SolverParams()):
    """Advance one time level; returns ``(v(k), StepReport)``."""
    v_prev = np.asarray(v_prev, dtype=float)
    if not np.all(np.isfinite(v_prev)):
        raise SolverError("previous level is not finite", step=k)
    if not 1 <= k <= grid.n:
        raise ValueError("step index out of range")
    g = _control_values(gd)
    g_flux = 0.5 * (g[k - 1] + g[k])
    system = _StepSystem(v_prev, k, sd, g_flux, grid, bm)
    tol = params.effective_tol(v_prev)
    if params.mode == "newton":
        v, updates = _newton(system, v_prev, tol, params, k)
    else:
        v, updates = _sweeps(system, v_prev, tol, params, k, params.mode)
    residual = float(np.max(np.abs(system.residual(v))))
    report = StepReport(k, params.mode, len(updates), np.asarray(updates),
                        contraction_factor(grid, bm.bbar), residual, tol)
    return v, report


def _sweeps(system: _StepSystem, v_prev, tol, params, k, mode):
    m, h = system.m, system.h
    v = v_prev.copy()
    updates = []
    all_nodes = np.arange(m)
    colours = (all_nodes[0::2], all_nodes[1::2])
    for _ in range(params.max_iter):
        new = v.copy()
        if mode == "jacobi":
            new[:m] = system.node_solve(all_nodes, v, params.scalar_tol)
        else:
            for idx in colours:
                if idx.size:
                    new[idx] = system.node_solve(idx, new, params.scalar_tol)
        new[m] = new[m - 1] + h * system.p
        a = float(np.max(np.abs(new - v)))
        updates.append(a)
        v = new
        if a <= tol:
            return v, updates
    raise SolverError(f"{mode} iteration did not converge at step {k} "
                      f"(last update {updates[-1]:.3e})", step=k, last_update=updates[-1])


def _newton(system: _StepSystem, v_prev, tol, params, k):
    m = system.m
    v = v_prev.copy()
    v[m] = v[m - 1] + system.h * system.p
    updates = []
    ab = np.zeros((3, m + 1))
    bv, bd = system.bm.value_and_derivative(v[:m])
    for _ in range(params.max_iter):
        res = system.residual(v, bv)
        ab[0, 1:] = -1.0
        ab[1, :m] = system.diag + system.c * bd
        ab[1, m] = 1.0
        ab[2, :-1] = -1.0
        dv = solve_banded((1, 1), ab, -res)
        step = float(np.max(np.abs(dv)))
        if step <= tol:
            # inside the stopping tolerance the Newton step is accepted as is
            updates.append(step)
            return v + dv, updates
        merit = float(res @ res)
        lam = 1.0
        while True:
            trial = v + lam * dv
            bv, bd = system.bm.value_and_derivative(trial[:m])
            r_trial = system.residual(trial, bv)
            if float(r_trial @ r_trial) <= (1.0 - 1e-4 * lam) * merit or merit == 0.0:
                break
            lam *= 0.5
            if lam < 1e-12:
                break
        if lam < 1e-12:
            # line search stalled: fall back to a contraction sweep
            trial = v.copy()
            trial[:m] = system.node_solve(np.arange(m), v, params.scalar_tol)
            trial[m] = trial[m - 1] + system.h * system.p
            bv, bd = system.bm.value_and_derivative(trial[:m])
        a = float(np.max(np.abs(trial - v)))
        updates.append(a)
        v = trial
        if a <= tol:
            return v, updates
    raise SolverError(f"newton iteration did not converge at step {k} "
                      f"(last update {updates[-1]:.3e})", step=k, last_update=updates[-1])


def solve_all(gd, sd: SteklovData, grid: Grid, bm: MollifiedEnthalpy,
              params: SolverParams = SolverParams(), reuse: tuple[np.ndarray, int] | None = None):
    """Discrete state for control ``gd``: row 0 is ``Phi_i``, rows 1..n by :func:`solve_step`.

    ``reuse=(rows, k0)`` copies rows ``0..k0-1`` from an earlier solve whose
    inputs agree up to level ``k0 - 1``.
    """
    sd.check(grid)
    g = _control_values(gd)
    if g.size != grid.n + 1:
        raise ValueError("control length does not match the grid")
    v = np.empty((grid.n + 1, grid.m + 1))
    first = 1
    if reuse is not None:
        rows, first = reuse
        first = max(1, int(first))
        v[:first] = rows[:first]
    else:
        v[0] = sd.phi_avg
    reports = []
    for k in range(first, grid.n + 1):
        try:
            v[k], rep = solve_step(v[k - 1], k, sd, g, grid, bm, params)
        except SolverError as exc:
            if exc.step is None:
                exc.step = k
            raise
        reports.append(rep)
    return DiscreteState(v, grid, reports), reports


def residual_check(state: DiscreteState | np.ndarray, sd: SteklovData, gd, grid: Grid,
                   bm: MollifiedEnthalpy) -> float:
    """Largest absolute residual of the per-level systems over k = 1..n.

    The residual of node i is h times the discrete weak identity tested with the
    i-th unit vector.
    """
    v = state.v if isinstance(state, DiscreteState) else np.asarray(state, dtype=float)
    if v.shape != (grid.n + 1, grid.m + 1):
        raise ValueError("state shape does not match grid")
    g = _control_values(gd)
    worst = 0.0
    for k in range(1, grid.n + 1):
        system = _StepSystem(v[k - 1], k, sd, 0.5 * (g[k - 1] + g[k]), grid, bm)
        worst = max(worst, float(np.max(np.abs(system.residual(v[k])))))
    return worst
