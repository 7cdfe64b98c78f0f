"""Kirchhoff transform, enthalpy function with latent-heat jumps, and its mollification.

Temperatures ``u`` are mapped to transformed temperatures ``v = F(u)`` with
``F(u) = int_{u^1}^u k``.  In the transformed variable the heat balance reads
``d b(v)/dt - v_xx = f`` where ``b' = alpha/k`` away from the critical values
``v^j = F(u^j)`` and ``b`` jumps by the latent heat ``gamma_j`` at each of them.

Coefficient pieces are polynomials in ``u`` (numbers, coefficient sequences or
``numpy.polynomial.Polynomial``) or arbitrary positive callables; polynomial
pieces are integrated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from .expressions import Poly

KIRCHHOFF_RTOL = 1e-12
GAUSS_ORDER = 64  # per half of the kernel support; >= 32 as required


class InvalidPhaseSpec(ValueError):
    pass


class KirchhoffError(RuntimeError):
    """Quadrature or inversion failure on one coefficient segment."""

    def __init__(self, segment: int, message: str):
        super().__init__(f"segment {segment}: {message}")
        self.segment = segment


def _as_piece(c):
    if isinstance(c, Polynomial):
        return c
    if isinstance(c, Poly):
        return c.to_numpy()
    if isinstance(c, (int, float)) and not isinstance(c, bool):
        return Polynomial([float(c)])
    if isinstance(c, (list, tuple, np.ndarray)):
        return Polynomial(np.asarray(c, dtype=float))
    if callable(c):
        return c
    raise InvalidPhaseSpec(f"cannot use {c!r} as a coefficient piece")


def _eval_piece(c, u):
    if isinstance(c, Polynomial):
        return c(u)
    return np.vectorize(lambda s: float(c(s)), otypes=[float])(u)


def _is_const(c) -> bool:
    return isinstance(c, Polynomial) and c.degree() == 0


def _tail_grid(anchor: float, span: float, direction: int) -> np.ndarray:
    reach = np.geomspace(1e-3, 1e6, 400) * max(1.0, span)
    return anchor + direction * np.concatenate([np.linspace(0.0, 1e-3 * max(1.0, span), 50), reach])


@dataclass(frozen=True, eq=False)
class PhaseSpec:
    """Material description of a J-phase-change medium.

    ``alpha_pieces[s]`` and ``k_pieces[s]`` apply on temperature segment ``s``:
    ``(-inf, u^1]``, ``[u^1, u^2]``, ..., ``[u^J, inf)``.  With no critical
    temperatures there is a single segment and ``reference_temp`` plays the role
    of ``u^1`` (the zero of the transformed temperature).
    """

    critical_temps: np.ndarray
    latent_heats: np.ndarray
    alpha_pieces: tuple
    k_pieces: tuple
    reference_temp: float = 0.0
    a0: float = field(init=False, default=0.0)

    def __post_init__(self):
        crit = np.atleast_1d(np.asarray(self.critical_temps, dtype=float))
        lat = np.atleast_1d(np.asarray(self.latent_heats, dtype=float))
        object.__setattr__(self, "critical_temps", crit)
        object.__setattr__(self, "latent_heats", lat)
        object.__setattr__(self, "alpha_pieces", tuple(_as_piece(c) for c in self.alpha_pieces))
        object.__setattr__(self, "k_pieces", tuple(_as_piece(c) for c in self.k_pieces))
        J = crit.size
        if lat.size != J:
            raise InvalidPhaseSpec("need one latent heat per critical temperature")
        if np.any(np.diff(crit) <= 0):
            raise InvalidPhaseSpec("critical temperatures must be strictly increasing")
        if np.any(lat <= 0) or not np.all(np.isfinite(lat)):
            raise InvalidPhaseSpec("latent heats must be positive")
        if len(self.alpha_pieces) != J + 1 or len(self.k_pieces) != J + 1:
            raise InvalidPhaseSpec(f"need {J + 1} alpha and k pieces for {J} critical temperatures")
        for s, grid in enumerate(self.segment_samples()):
            for name, pieces in (("alpha", self.alpha_pieces), ("k", self.k_pieces)):
                vals = _eval_piece(pieces[s], grid)
                if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                    raise InvalidPhaseSpec(f"{name} piece on segment {s} is not positive on its segment")
        tail = _tail_grid(self.anchor_temps[-1], self.span, +1)[-100:]
        ratio = _eval_piece(self.alpha_pieces[-1], tail) / _eval_piece(self.k_pieces[-1], tail)
        a0 = float(np.min(ratio))
        if not a0 > 0:
            raise InvalidPhaseSpec("liminf alpha/k at +infinity must be positive")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "_segments", _Segments(self))

    @property
    def J(self) -> int:
        return self.critical_temps.size

    @property
    def anchor_temps(self) -> np.ndarray:
        """Temperature where each segment's transformed value is pinned."""
        if self.J == 0:
            return np.array([self.reference_temp])
        return np.concatenate([[self.critical_temps[0]], self.critical_temps])

    @property
    def span(self) -> float:
        if self.J < 2:
            return 1.0
        return float(self.critical_temps[-1] - self.critical_temps[0])

    def segment_bounds(self, s: int) -> tuple[float, float]:
        edges = np.concatenate([[-np.inf], self.critical_temps, [np.inf]])
        return float(edges[s]), float(edges[s + 1])

    def segment_samples(self, count: int = 2001) -> list[np.ndarray]:
        out = []
        for s in range(self.J + 1):
            lo, hi = self.segment_bounds(s)
            if math.isfinite(lo) and math.isfinite(hi):
                out.append(np.linspace(lo, hi, count))
            elif math.isfinite(hi):
                out.append(_tail_grid(hi, self.span, -1))
            elif math.isfinite(lo):
                out.append(_tail_grid(lo, self.span, +1))
            else:
                r = self.reference_temp
                out.append(np.concatenate([_tail_grid(r, 1.0, -1), _tail_grid(r, 1.0, +1)]))
        return out

    @classmethod
    def single_phase(cls, alpha=1.0, k=1.0, reference_temp: float = 0.0) -> "PhaseSpec":
        return cls(np.array([]), np.array([]), (alpha,), (k,), reference_temp=reference_temp)

    @classmethod
    def constant_phases(cls, critical_temps, latent_heats, alphas, ks) -> "PhaseSpec":
        return cls(np.asarray(critical_temps, float), np.asarray(latent_heats, float),
                   tuple(float(a) for a in alphas), tuple(float(k) for k in ks))


# ---------------------------------------------------------------------------
# Kirchhoff transform


class _Segments:
    """Per-segment closed forms of F and of int alpha du (internal)."""

    def __init__(self, spec: PhaseSpec):
        self.spec = spec
        anchors = spec.anchor_temps
        self.anchors = anchors
        self.K = [k.integ(lbnd=a) if isinstance(k, Polynomial) else None
                  for k, a in zip(spec.k_pieces, anchors)]
        self.A = [al.integ(lbnd=a) if isinstance(al, Polynomial) else None
                  for al, a in zip(spec.alpha_pieces, anchors)]
        # transformed value at each anchor (v^1 = 0)
        v_anchor = np.zeros(spec.J + 1)
        for s in range(2, spec.J + 1):
            v_anchor[s] = v_anchor[s - 1] + self.k_integral(s - 1, anchors[s - 1], anchors[s])
        self.v_anchor = v_anchor

    def k_integral(self, s, a, b):
        if self.K[s] is not None:
            return self.K[s](b) - self.K[s](a)
        val, err = integrate.quad(lambda y: float(self.spec.k_pieces[s](y)), a, b,
                                  epsabs=0.0, epsrel=KIRCHHOFF_RTOL, limit=500)
        if not math.isfinite(val) or err > max(KIRCHHOFF_RTOL * abs(val) * 10, 1e-300):
            raise KirchhoffError(s, f"quadrature of k on [{a}, {b}] did not converge")
        return val

    def alpha_integral(self, s, a, b):
        if self.A[s] is not None:
            return self.A[s](b) - self.A[s](a)
        val, err = integrate.quad(lambda y: float(self.spec.alpha_pieces[s](y)), a, b,
                                  epsabs=0.0, epsrel=KIRCHHOFF_RTOL, limit=500)
        if not math.isfinite(val) or err > max(KIRCHHOFF_RTOL * abs(val) * 10, 1e-300):
            raise KirchhoffError(s, f"quadrature of alpha on [{a}, {b}] did not converge")
        return val

    def segment_of_u(self, u):
        return np.searchsorted(self.spec.critical_temps, u, side="left")

    def segment_of_v(self, v):
        return np.searchsorted(self.v_anchor[1:], v, side="left") if self.spec.J else np.zeros(np.shape(v), int)

    def F_seg(self, s, u):
        """F on segment s (extended by the segment's own formula)."""
        u = np.asarray(u, dtype=float)
        if self.K[s] is not None:
            return self.v_anchor[s] + self.K[s](u)
        a = self.anchors[s]
        flat = np.array([self.k_integral(s, a, ui) for ui in u.ravel()])
        return self.v_anchor[s] + flat.reshape(u.shape)

    def F_inv_seg(self, s, v):
        """Invert F on segment s by bracketing bisection plus Newton polish."""
        v = np.asarray(v, dtype=float)
        k = self.spec.k_pieces[s]
        a = self.anchors[s]
        if _is_const(k):
            return a + (v - self.v_anchor[s]) / k.coef[0]
        lo_b, hi_b = self.spec.segment_bounds(s)
        fun = lambda u: self.F_seg(s, u)
        dfun = lambda u: _eval_piece(k, u)
        return monotone_solve(fun, dfun, v, a, lo_b, hi_b, segment=s)


def monotone_solve(fun, dfun, target, x0, lo_bound=-np.inf, hi_bound=np.inf,
                   rtol=1e-15, segment=-1, maxiter=200):
    """Vectorised root of an increasing function: ``fun(x) = target``.

    A bracket is grown from ``x0`` (clipped to the bounds), then safeguarded
    Newton steps fall back to bisection when they leave the bracket.
    """
    target = np.asarray(target, dtype=float)
    shape = target.shape
    y = target.ravel()
    n = y.size
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), shape).ravel().copy()
    fx0 = fun(x0) - y
    lo = np.where(fx0 <= 0, x0, np.nan)
    hi = np.where(fx0 >= 0, x0, np.nan)
    step = np.maximum(np.abs(fx0), 1.0)
    for _ in range(2100):
        need_hi = np.isnan(hi)
        need_lo = np.isnan(lo)
        if not (need_hi.any() or need_lo.any()):
            break
        trial = np.where(need_hi, x0 + step, x0 - step)
        trial = np.clip(trial, lo_bound, hi_bound)
        ft = fun(trial) - y
        hi = np.where(need_hi & (ft >= 0), trial, hi)
        lo = np.where(need_hi & (ft < 0), trial, lo)
        lo = np.where(need_lo & (ft <= 0), trial, lo)
        hi = np.where(need_lo & (ft > 0), trial, hi)
        stuck = (need_hi & (trial >= hi_bound) & (ft < 0)) | (need_lo & (trial <= lo_bound) & (ft > 0))
        if stuck.any():
            raise KirchhoffError(segment, "value outside the range of the segment")
        step = step * 2.0
    else:
        raise KirchhoffError(segment, "could not bracket root")
    x = np.clip(x0, lo, hi)
    active = np.ones(n, bool)
    for _ in range(maxiter):
        fx = fun(x) - y
        lo = np.where(fx <= 0, np.maximum(lo, x), lo)
        hi = np.where(fx >= 0, np.minimum(hi, x), hi)
        d = dfun(x)
        newton = x - fx / d
        bad = ~((newton > lo) & (newton < hi)) | ~np.isfinite(newton)
        xn = np.where(bad, 0.5 * (lo + hi), newton)
        xn = np.where(fx == 0, x, xn)
        scale = np.maximum(1.0, np.abs(xn))
        active = (np.abs(xn - x) > rtol * scale) & (hi - lo > 4e-16 * scale)
        x = xn
        if not active.any():
            break
    return x.reshape(shape)


def kirchhoff_transform(u, spec: PhaseSpec):
    """Transformed temperature ``F(u) = int_{u^1}^u k(y) dy``."""
    seg = _segments(spec)
    u = np.asarray(u, dtype=float)
    s_idx = seg.segment_of_u(u)
    out = np.empty(u.shape)
    for s in np.unique(s_idx):
        mask = s_idx == s
        out[mask] = seg.F_seg(int(s), u[mask])
    return float(out) if out.ndim == 0 else out


def inverse_kirchhoff(v, spec: PhaseSpec):
    """Temperature ``u`` with ``F(u) = v``."""
    seg = _segments(spec)
    v = np.asarray(v, dtype=float)
    s_idx = seg.segment_of_v(v)
    out = np.empty(v.shape)
    for s in np.unique(s_idx):
        mask = s_idx == s
        out[mask] = seg.F_inv_seg(int(s), v[mask])
    return float(out) if out.ndim == 0 else out


def _segments(spec: PhaseSpec) -> _Segments:
    return spec._segments


# ---------------------------------------------------------------------------
# enthalpy


@dataclass(frozen=True, eq=False)
class EnthalpyFunction:
    """Monotone enthalpy ``b(v)`` in the transformed variable.

    ``b(0-) = 0``; on segment ``s`` it equals ``offset[s] + int alpha du`` along
    the segment, and it jumps by ``jumps[j]`` at ``phase_values[j]``.  At a
    critical value itself the left limit is returned.
    """

    spec: PhaseSpec
    phase_values: np.ndarray
    jumps: np.ndarray
    bbar: float
    offsets: np.ndarray
    slopes: np.ndarray  # beta on affine segments, nan elsewhere

    @property
    def n_segments(self) -> int:
        return self.jumps.size + 1

    def segment_of(self, v):
        return np.searchsorted(self.phase_values, v, side="left")

    def branch(self, s: int, v):
        """Segment-``s`` formula of ``b`` (smooth continuation, no jumps)."""
        v = np.asarray(v, dtype=float)
        slope = self.slopes[s]
        seg = _segments(self.spec)
        if np.isfinite(slope):
            return self.offsets[s] + slope * (v - seg.v_anchor[s])
        u = seg.F_inv_seg(s, v)
        a = seg.anchors[s]
        if seg.A[s] is not None:
            return self.offsets[s] + seg.A[s](u)
        flat = np.array([seg.alpha_integral(s, a, ui) for ui in np.ravel(u)])
        return self.offsets[s] + flat.reshape(np.shape(u))

    def beta_branch(self, s: int, v):
        """Segment-``s`` formula of ``b' = alpha/k``."""
        v = np.asarray(v, dtype=float)
        slope = self.slopes[s]
        if np.isfinite(slope):
            return np.full(v.shape, slope)
        seg = _segments(self.spec)
        u = seg.F_inv_seg(s, v)
        return _eval_piece(self.spec.alpha_pieces[s], u) / _eval_piece(self.spec.k_pieces[s], u)

    @property
    def all_affine(self) -> bool:
        return bool(np.all(np.isfinite(self.slopes)))

    def _affine_parts(self, v, s_idx):
        anchors = _segments(self.spec).v_anchor
        return self.offsets[s_idx] + self.slopes[s_idx] * (v - anchors[s_idx]), self.slopes[s_idx]

    def _piecewise(self, v, fn):
        v = np.asarray(v, dtype=float)
        s_idx = self.segment_of(v)
        if self.all_affine:
            val, slope = self._affine_parts(v, s_idx)
            out = val if fn == self.branch else slope * np.ones(v.shape)
            return float(out) if np.ndim(out) == 0 else out
        out = np.empty(v.shape)
        for s in np.unique(s_idx):
            mask = s_idx == s
            out[mask] = fn(int(s), v[mask])
        return float(out) if out.ndim == 0 else out

    def __call__(self, v):
        return self._piecewise(v, self.branch)

    def beta(self, v):
        return self._piecewise(v, self.beta_branch)

    def is_affine(self) -> bool:
        return self.jumps.size == 0 and bool(np.isfinite(self.slopes[0]))


def build_enthalpy(spec: PhaseSpec, bbar: float | None = None) -> EnthalpyFunction:
    """Enthalpy with jumps ``gamma_j`` at ``v^j``.

    The lower bound ``bbar`` of ``b'`` is the user's analytic bound when given
    (it must not exceed the sampled infimum of ``alpha/k``), otherwise the
    sampled infimum less 1%.
    """
    seg = _segments(spec)
    J = spec.J
    beta_min = np.inf
    for s, grid in enumerate(spec.segment_samples()):
        beta = _eval_piece(spec.alpha_pieces[s], grid) / _eval_piece(spec.k_pieces[s], grid)
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0):
            raise InvalidPhaseSpec(f"beta = alpha/k is not positive on segment {s}")
        beta_min = min(beta_min, float(beta.min()))
    if bbar is None:
        bbar_used = 0.99 * beta_min
    else:
        if not bbar > 0:
            raise InvalidPhaseSpec("analytic bound on b' must be positive")
        if bbar > beta_min * (1 + 1e-12):
            raise InvalidPhaseSpec(f"analytic bound {bbar} exceeds sampled inf of alpha/k ({beta_min})")
        bbar_used = float(bbar)

    slopes = np.full(J + 1, np.nan)
    for s in range(J + 1):
        al, k = spec.alpha_pieces[s], spec.k_pieces[s]
        if _is_const(al) and _is_const(k):
            slopes[s] = al.coef[0] / k.coef[0]
    offsets = np.zeros(J + 1)
    partial = EnthalpyFunction(spec, seg.v_anchor[1:].copy(), spec.latent_heats.copy(),
                               bbar_used, offsets, slopes)
    for s in range(1, J + 1):
        left_limit = float(partial.branch(s - 1, seg.v_anchor[s]))
        offsets[s] = left_limit + spec.latent_heats[s - 1]
    return partial


# ---------------------------------------------------------------------------
# mollifier


def _bump(s):
    s = np.asarray(s, dtype=float)
    q = (1.0 - s) * (1.0 + s)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = np.where(q > 0, np.exp(-1.0 / np.where(q > 0, q, 1.0)), 0.0)
    return out


def _kernel_constant() -> float:
    val, _ = integrate.quad(_bump, -1.0, 1.0, epsabs=1e-16, epsrel=1e-13, limit=200)
    return 1.0 / val


KERNEL_CONSTANT = _kernel_constant()
_GX, _GW = np.polynomial.legendre.leggauss(GAUSS_ORDER)


def kernel(z, eps: float):
    """Mollifier ``omega_eps(z) = C/eps * exp(-1/(1-(z/eps)^2))`` on ``|z| < eps``."""
    return KERNEL_CONSTANT / eps * _bump(np.asarray(z, dtype=float) / eps)


@dataclass(frozen=True, eq=False)
class MollifiedEnthalpy:
    """``b_eps = b * omega_eps`` evaluated by piecewise Gauss-Legendre quadrature.

    The kernel support ``[-1, 1]`` (in units of ``eps``) is cut at 0 and at
    every critical value inside the window, so each quadrature piece sees a
    smooth integrand.  Where ``b`` is affine on the whole window the exact
    value ``b(v)`` is returned.
    """

    base: EnthalpyFunction
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("mollification radius must be positive")

    @property
    def bbar(self) -> float:
        return self.base.bbar

    def value(self, v):
        return self._evaluate(v)[0]

    def derivative(self, v):
        return self._evaluate(v)[1]

    __call__ = value

    def value_and_derivative(self, v):
        return self._evaluate(v)

    def _evaluate(self, v):
        b = self.base
        eps = self.epsilon
        v = np.asarray(v, dtype=float)
        shape = v.shape
        vf = v.ravel()
        val = np.empty(vf.size)
        der = np.empty(vf.size)
        seg = b.segment_of(vf)
        vj = b.phase_values
        if vj.size:
            near = np.any(np.abs(vf[:, None] - vj[None, :]) < eps, axis=1)
        else:
            near = np.zeros(vf.size, bool)
        fast = ~near & np.isfinite(b.slopes[seg])
        if fast.any():
            val[fast] = b(vf[fast])
            der[fast] = b.slopes[seg[fast]]
        slow = ~fast
        if slow.any():
            val[slow], der[slow] = self._quadrature(vf[slow])
        if shape == ():
            return float(val[0]), float(der[0])
        return val.reshape(shape), der.reshape(shape)

    def _quadrature(self, v):
        b = self.base
        eps = self.epsilon
        vj = b.phase_values
        cuts = np.clip((v[:, None] - vj[None, :]) / eps, -1.0, 1.0)
        bp = np.sort(np.concatenate([np.full((v.size, 1), -1.0), np.zeros((v.size, 1)), cuts,
                                     np.ones((v.size, 1))], axis=1), axis=1)
        a, c = bp[:, :-1], bp[:, 1:]
        half = 0.5 * (c - a)
        mid = 0.5 * (c + a)
        s = mid[..., None] + half[..., None] * _GX  # (N, P, Q)
        weights = half[..., None] * _GW * (KERNEL_CONSTANT * _bump(s))
        y = v[:, None, None] - eps * s
        piece_seg = b.segment_of(v[:, None] - eps * mid)  # (N, P)
        if b.all_affine:
            bv, bd = b._affine_parts(y, piece_seg[..., None])
        else:
            bv = np.zeros(y.shape)
            bd = np.zeros(y.shape)
            for sg in np.unique(piece_seg):
                mask = piece_seg == sg
                bv[mask] = b.branch(int(sg), y[mask])
                bd[mask] = b.beta_branch(int(sg), y[mask])
        val = np.einsum("npq,npq->n", weights, bv)
        der = np.einsum("npq,npq->n", weights, bd)
        if vj.size:
            der = der + kernel(v[:, None] - vj[None, :], eps) @ b.jumps
        return val, der


def mollify(b: EnthalpyFunction, eps: float) -> MollifiedEnthalpy:
    return MollifiedEnthalpy(b, float(eps))


def mollified_derivative(bm: MollifiedEnthalpy, v):
    """``b_eps'(v)``: mollified ``alpha/k`` plus ``gamma_j * omega_eps(v - v^j)``."""
    return bm.derivative(v)
