"""Vectorised adaptive quadrature used by the welfare and nudging code.

The integrands here are cheap numpy expressions evaluated on many nodes at
once, so a composite Gauss-Legendre rule with panel bisection is much faster
than calling ``scipy.integrate.quad`` point by point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    nodes: int

    def __add__(self, other: "QuadResult") -> "QuadResult":
        return QuadResult(self.value + other.value, self.error + other.error, self.nodes + other.nodes)


class QuadratureError(ArithmeticError):
    """Raised when the requested tolerance cannot be reached."""

    def __init__(self, message: str, estimate: QuadResult):
        super().__init__(message)
        self.estimate = estimate


def _panel_rule(f, a: np.ndarray, b: np.ndarray):
    # 10-point rule on each panel and on both halves of it.
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    quarter = 0.5 * half
    x_full = mid[:, None] + half[:, None] * _GL_NODES
    x_left = (a + quarter)[:, None] + quarter[:, None] * _GL_NODES
    x_right = (mid + quarter)[:, None] + quarter[:, None] * _GL_NODES
    x = np.concatenate([x_full, x_left, x_right], axis=1)
    y = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    k = _GL_NODES.size
    coarse = half * (y[:, :k] @ _GL_WEIGHTS)
    fine = quarter * (y[:, k:2 * k] @ _GL_WEIGHTS + y[:, 2 * k:] @ _GL_WEIGHTS)
    return fine, np.abs(fine - coarse), x.size


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    tol: float = 1e-12,
    panels: int = 8,
    max_rounds: int = 60,
    strict: bool = False,
) -> QuadResult:
    """Integrate a vectorised ``f`` over the finite interval [a, b].

    Panels whose two-level error estimate exceeds their share of ``tol`` are
    bisected until every panel converges or ``max_rounds`` is exhausted.
    """
    if b == a:
        return QuadResult(0.0, 0.0, 0)
    if b < a:
        r = integrate(f, b, a, tol=tol, panels=panels, max_rounds=max_rounds, strict=strict)
        return QuadResult(-r.value, r.error, r.nodes)
    edges = np.linspace(a, b, panels + 1)
    lo, hi = edges[:-1], edges[1:]
    total, err_total, nodes = 0.0, 0.0, 0
    length = b - a
    for _ in range(max_rounds):
        vals, errs, n = _panel_rule(f, lo, hi)
        nodes += n
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite integrand", QuadResult(np.nan, np.inf, nodes))
        share = tol * (hi - lo) / length
        done = (errs <= share) | ((hi - lo) <= 1e-14 * max(1.0, abs(a), abs(b)))
        total += float(vals[done].sum())
        err_total += float(errs[done].sum())
        if done.all():
            return QuadResult(total, err_total, nodes)
        lo, hi = lo[~done], hi[~done]
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    vals, errs, n = _panel_rule(f, lo, hi)
    res = QuadResult(total + float(vals.sum()), err_total + float(errs.sum()), nodes + n)
    if strict:
        raise QuadratureError("adaptive quadrature did not converge", res)
    return res


def _tail(g, z0: float, *, tol: float, tail_tol: float) -> QuadResult:
    # integrate g over [z0, inf) in chunks of doubling length; stop once a
    # chunk contributes less than tail_tol or exp(-z) underflows
    res = QuadResult(0.0, 0.0, 0)
    width = 4.0
    z = z0
    while z < 740.0:
        z_next = min(z + width, 740.0)
        chunk = integrate(g, z, z_next, tol=tol)
        res = res + chunk
        z = z_next
        width *= 2.0
        if abs(chunk.value) < tail_tol and z - z0 > 8.0:
            break
    return res


def integrate_unit(
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    *,
    tol: float = 1e-12,
    tail_tol: float = 1e-13,
    weight: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> QuadResult:
    """Integrate ``g(u, 1-u) * weight(u, 1-u)`` over a sub-interval of [0, 1].

    The integrand receives both ``u`` and its complement so that callers can
    evaluate distortion derivatives accurately next to either endpoint.  An
    endpoint at 0 is handled with ``u = exp(-z)`` and an endpoint at 1 with
    ``1 - u = exp(-z)``, which turns integrable power singularities there
    into exponentially decaying tails.  A ``weight`` that blows up at an
    endpoint is multiplied by the Jacobian before ``g`` so that the product
    cannot overflow.
    """
    if weight is not None:
        h = g
        g = lambda u, s, jac=1.0: h(u, s) * (weight(u, s) * jac)
    else:
        h = g
        g = lambda u, s, jac=1.0: h(u, s) * jac
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"interval [{lo}, {hi}] is not inside [0, 1]")
    if hi - lo <= 0.0:
        return QuadResult(0.0, 0.0, 0)
    res = QuadResult(0.0, 0.0, 0)
    a, b = lo, hi
    if lo == 0.0:
        cut = min(0.5, hi)

        def left(z):
            u = np.exp(-z)
            return g(u, -np.expm1(-z), u)

        res = res + _tail(left, -np.log(cut), tol=tol, tail_tol=tail_tol)
        a = cut
    if hi == 1.0:
        cut = max(0.5, a)

        def right(z):
            s = np.exp(-z)
            return g(-np.expm1(-z), s, s)

        res = res + _tail(right, -np.log1p(-cut), tol=tol, tail_tol=tail_tol)
        b = cut
    if b > a:
        res = res + integrate(lambda u: g(u, 1.0 - u), a, b, tol=tol)
    return res
