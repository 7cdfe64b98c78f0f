"""Data functions: polynomial expressions, sampled curves and generic callables.

Problem data (initial profile, fluxes, sources, measurements) reach the solver
in one of four shapes:

* a plain number (constant),
* a :class:`Poly` -- a polynomial in named variables, parsed from strings such
  as ``"1 + 2*x*t - t**2"``; cell averages of these are computed exactly,
* a :class:`PiecewiseLinear` (or :class:`Samples`) -- linear interpolation
  through knots; also integrated exactly,
* any Python callable; cell averages fall back to adaptive quadrature.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

QUAD_RTOL = 1e-10


class ExpressionError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# polynomials


class Poly:
    """Polynomial in a fixed tuple of variable names.

    Terms are stored as ``{exponents: coefficient}`` with one exponent per
    variable.
    """

    def __init__(self, terms: Mapping[tuple[int, ...], float], variables: tuple[str, ...]):
        self.variables = tuple(variables)
        clean = {}
        for exps, c in terms.items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != len(self.variables):
                raise ExpressionError("exponent tuple does not match variables")
            if c != 0.0:
                clean[exps] = clean.get(exps, 0.0) + float(c)
        self.terms = {e: c for e, c in clean.items() if c != 0.0}

    @classmethod
    def constant(cls, c: float, variables: tuple[str, ...]) -> "Poly":
        return cls({(0,) * len(variables): float(c)}, variables)

    @classmethod
    def parse(cls, text: str | float | int, variables: tuple[str, ...]) -> "Poly":
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return cls.constant(float(text), variables)
        if not isinstance(text, str):
            raise ExpressionError(f"expected expression string or number, got {type(text).__name__}")
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
        return _PolyBuilder(variables).visit(tree.body)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"expected {len(self.variables)} arguments")
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        out = np.zeros(arrays[0].shape) if arrays else 0.0
        for exps, c in self.terms.items():
            term = c
            for a, e in zip(arrays, exps):
                if e:
                    term = term * a**e
            out = out + term
        if np.ndim(out) == 0:
            return float(out)
        return out

    def antiderivative(self, var: str) -> "Poly":
        j = self.variables.index(var)
        terms = {}
        for exps, c in self.terms.items():
            e = list(exps)
            e[j] += 1
            terms[tuple(e)] = c / e[j]
        return Poly(terms, self.variables)

    def to_numpy(self) -> np.polynomial.Polynomial:
        if len(self.variables) != 1:
            raise ExpressionError("only univariate polynomials convert to numpy form")
        coef = np.zeros(self.degree + 1)
        for (e,), c in self.terms.items():
            coef[e] += c
        return np.polynomial.Polynomial(coef)

    def __add__(self, other: "Poly") -> "Poly":
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Poly(terms, self.variables)

    def __mul__(self, other: "Poly") -> "Poly":
        terms: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Poly(terms, self.variables)

    def __neg__(self) -> "Poly":
        return Poly({e: -c for e, c in self.terms.items()}, self.variables)

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        parts = []
        for exps, c in sorted(self.terms.items()):
            mono = "*".join(
                v if e == 1 else f"{v}**{e}" for v, e in zip(self.variables, exps) if e
            )
            parts.append(f"{c!r}" + (f"*{mono}" if mono else ""))
        return "Poly(" + " + ".join(parts) + ")"


class _PolyBuilder(ast.NodeVisitor):
    def __init__(self, variables):
        self.variables = tuple(variables)

    def generic_visit(self, node):
        raise ExpressionError(f"unsupported syntax in expression: {type(node).__name__}")

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        return Poly.constant(node.value, self.variables)

    def visit_Name(self, node):
        if node.id not in self.variables:
            raise ExpressionError(
                f"unknown variable {node.id!r}; allowed: {', '.join(self.variables)}"
            )
        exps = tuple(1 if v == node.id else 0 for v in self.variables)
        return Poly({exps: 1.0}, self.variables)

    def visit_UnaryOp(self, node):
        operand = self.visit(node.operand)
        if isinstance(node.op, ast.USub):
            return -operand
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionError("unsupported unary operator")

    def visit_BinOp(self, node):
        left = self.visit(node.left)
        if isinstance(node.op, ast.Pow):
            power = node.right
            if not (isinstance(power, ast.Constant) and isinstance(power.value, int) and power.value >= 0):
                raise ExpressionError("exponents must be non-negative integer literals")
            out = Poly.constant(1.0, self.variables)
            for _ in range(power.value):
                out = out * left
            return out
        right = self.visit(node.right)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left + (-right)
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if not right.is_constant():
                raise ExpressionError("division is only allowed by constants")
            c = right(*([0.0] * len(self.variables)))
            if c == 0.0:
                raise ExpressionError("division by zero")
            return left * Poly.constant(1.0 / c, self.variables)
        raise ExpressionError(f"unsupported operator {type(node.op).__name__}")


# ---------------------------------------------------------------------------
# piecewise-linear curves


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``(knots, values)``.

    Outside the knot range the end values are held constant.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("knots and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        out = np.interp(t, self.knots, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def primitive(self, t) -> np.ndarray:
        """Exact integral from the first knot to ``t`` (t inside the knot range)."""
        t = np.asarray(t, dtype=float)
        k, v = self.knots, self.values
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(k))])
        idx = np.clip(np.searchsorted(k, t, side="right") - 1, 0, k.size - 2)
        dt = t - k[idx]
        slope = (v[idx + 1] - v[idx]) / (k[idx + 1] - k[idx])
        return cum[idx] + v[idx] * dt + 0.5 * slope * dt * dt

    def integral(self, a, b):
        return self.primitive(b) - self.primitive(a)


class Samples(PiecewiseLinear):
    """Measured samples, linearly interpolated."""


# ---------------------------------------------------------------------------
# generic helpers


def as_function(data, variables: tuple[str, ...]):
    """Normalise a data spec (number, expression string, Poly, curve, callable)."""
    if data is None:
        return Poly.constant(0.0, variables)
    if isinstance(data, (Poly, PiecewiseLinear)):
        return data
    if isinstance(data, (int, float, str)) and not isinstance(data, bool):
        return Poly.parse(data, variables)
    if callable(data):
        return data
    raise ExpressionError(f"cannot interpret data of type {type(data).__name__}")


def evaluate(func, *args):
    """Evaluate a normalised data function, broadcasting constants."""
    out = func(*args)
    if np.ndim(out) == 0 and any(np.ndim(a) > 0 for a in args):
        shape = np.broadcast_shapes(*[np.shape(a) for a in args])
        return np.full(shape, float(out))
    return out


def cell_averages_1d(func, edges: np.ndarray) -> np.ndarray:
    """Mean of a univariate data function over each ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    width = b - a
    if isinstance(func, Poly):
        prim = func.antiderivative(func.variables[0])
        return (evaluate(prim, b) - evaluate(prim, a)) / width
    if isinstance(func, PiecewiseLinear):
        return func.integral(a, b) / width
    out = np.empty(a.size)
    for i in range(a.size):
        val, err = integrate.quad(lambda s: float(func(s)), a[i], b[i],
                                  epsabs=1e-14, epsrel=QUAD_RTOL, limit=200)
        if not math.isfinite(val) or err > max(QUAD_RTOL * abs(val), 1e-13):
            raise QuadratureError(
                f"cell average on [{a[i]:.6g}, {b[i]:.6g}] did not converge (error estimate {err:.3g})"
            )
        out[i] = val / width[i]
    return out


def cell_averages_2d(func, x_edges: np.ndarray, t_edges: np.ndarray) -> np.ndarray:
    """Means of ``func(x, t)`` over the rectangles; result has shape (n_t, n_x)."""
    x_edges = np.asarray(x_edges, dtype=float)
    t_edges = np.asarray(t_edges, dtype=float)
    hx = np.diff(x_edges)
    ht = np.diff(t_edges)
    if isinstance(func, Poly):
        ix = func.variables.index("x")
        it = func.variables.index("t")
        out = np.zeros((ht.size, hx.size))
        for exps, c in func.terms.items():
            px, pt = exps[ix], exps[it]
            mx = (x_edges[1:] ** (px + 1) - x_edges[:-1] ** (px + 1)) / ((px + 1) * hx)
            mt = (t_edges[1:] ** (pt + 1) - t_edges[:-1] ** (pt + 1)) / ((pt + 1) * ht)
            out += c * np.outer(mt, mx)
        return out
    # tensor Gauss-Legendre, order doubled until the means settle
    prev = None
    for order in (4, 8, 16, 32, 64):
        z, w = np.polynomial.legendre.leggauss(order)
        xs = 0.5 * (x_edges[:-1, None] + x_edges[1:, None]) + 0.5 * hx[:, None] * z  # (mx, q)
        ts = 0.5 * (t_edges[:-1, None] + t_edges[1:, None]) + 0.5 * ht[:, None] * z  # (nt, q)
        X = xs[None, :, None, :]
        Tt = ts[:, None, :, None]
        vals = evaluate(func, X, Tt)
        cur = 0.25 * np.einsum("kiab,a,b->ki", vals, w, w)
        if prev is not None:
            scale = max(np.max(np.abs(cur)), 1.0)
            if np.max(np.abs(cur - prev)) <= QUAD_RTOL * scale:
                return cur
        prev = cur
    raise QuadratureError("source-term cell averages did not converge with 64-point tensor Gauss rule")
