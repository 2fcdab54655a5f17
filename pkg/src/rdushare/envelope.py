"""Convex envelope of the conjugate distortion, tangent points and FI mass."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import optimize

from .distortion import (
    Linear,
    Mixture,
    Shape,
    ShapeReport,
    WeightingFunction,
    classify,
    conjugate,
)

HULL_RESOLUTION = 10_001
REFINE_RESOLUTION = 40_001
BRACKET_EPS = 1e-9
TANGENT_TOL = 1e-12


class DegenerateEnvelope(ArithmeticError):
    """The tangency equation has no sign change in the admissible bracket."""


class Representation(str, Enum):
    ANALYTIC_INVERSE_S = "AnalyticInverseS"
    ANALYTIC_S = "AnalyticS"
    IDENTITY = "Identity"
    COINCIDES = "CoincidesWithTtilde"
    HULL = "PiecewiseLinearHull"


def _tt(T: WeightingFunction, u, s):
    """T~(u) and T~'(u) from the pair (u, s = 1 - u)."""
    return T.cvalue(s, u), T.d1(s, u)


def _g_inverse_s(T, u):
    u = np.asarray(u, dtype=float)
    val, d = _tt(T, u, 1.0 - u)
    return float(d * u - val)


def _h_s(T, u):
    u = np.asarray(u, dtype=float)
    s = 1.0 - u
    val, d = _tt(T, u, s)
    return float(d * s - T.value(s, u))  # 1 - T~(u) = T(1 - u)


def _root(fn, lo, hi, name):
    flo, fhi = fn(lo), fn(hi)
    if not (flo < 0.0 < fhi or fhi < 0.0 < flo):
        raise DegenerateEnvelope(f"{name}: no sign change on [{lo:.3g}, {hi:.3g}] (values {flo:.3g}, {fhi:.3g})")
    x = optimize.brentq(fn, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    # brentq stops at a bracket of machine width; take the better end
    cands = [x, np.nextafter(x, lo), np.nextafter(x, hi)]
    x = min(cands, key=lambda c: abs(fn(c)))
    return float(x)


def _inflection_of_conjugate(T: WeightingFunction, rep: ShapeReport | None = None) -> float:
    rep = rep or classify(T)
    if rep.inflection is None:
        raise DegenerateEnvelope(f"{T!r} has no inflection point")
    return 1.0 - rep.inflection


def tangent_point_inverse_s(T: WeightingFunction, rep: ShapeReport | None = None) -> float:
    """Tangent point p* of the chord from the origin to T~, for inverse-S ``T``.

    Solves T~'(p) p = T~(p) on [p_bar, 1).  The right end of the bracket moves
    geometrically toward 1 until the residual turns positive, which handles
    weightings whose conjugate slope blows up at 1.
    """
    if isinstance(T, Mixture) and T.weight < 1.0:
        # the residual of (1-f) T + f id is (1-f) times that of T
        return tangent_point_inverse_s(T.base)
    lo = _inflection_of_conjugate(T, rep)
    fn = lambda u: _g_inverse_s(T, u)
    hi = None
    for k in range(1, 17):
        cand = 1.0 - 10.0 ** (-k)
        if cand <= lo:
            continue
        if fn(cand) > 0.0:
            hi = cand
            break
    if hi is None:
        raise DegenerateEnvelope(
            f"inverse-S tangency for {T!r}: residual stays nonpositive up to 1-1e-16 (g(p_bar)={fn(lo):.3g})"
        )
    p = _root(fn, lo, hi, "inverse-S tangency")
    if abs(fn(p)) >= TANGENT_TOL:
        raise DegenerateEnvelope(f"inverse-S tangency residual {fn(p):.3g} above {TANGENT_TOL}")
    return p


def tangent_point_s(T: WeightingFunction, rep: ShapeReport | None = None) -> float:
    """Tangent point p* of the chord from T~ to (1, 1), for S-shaped ``T``.

    Solves T~'(p)(1 - p) = 1 - T~(p) on (0, p_bar].
    """
    if isinstance(T, Mixture) and T.weight < 1.0:
        return tangent_point_s(T.base)
    hi = _inflection_of_conjugate(T, rep)
    fn = lambda u: _h_s(T, u)
    lo = None
    for k in range(1, 17):
        cand = 10.0 ** (-k)
        if cand >= hi:
            continue
        if fn(cand) < 0.0:
            lo = cand
            break
    if lo is None:
        raise DegenerateEnvelope(f"S tangency for {T!r}: residual stays nonnegative down to 1e-16")
    p = _root(fn, lo, hi, "S tangency")
    if abs(fn(p)) >= TANGENT_TOL:
        raise DegenerateEnvelope(f"S tangency residual {fn(p):.3g} above {TANGENT_TOL}")
    return p


def hull_envelope(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of the points (t_i, y_i), t increasing."""
    idx: list[int] = []
    for i in range(len(t)):
        while len(idx) >= 2:
            a, b = idx[-2], idx[-1]
            cross = (t[b] - t[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (t[i] - t[a])
            if cross <= 0.0:
                idx.pop()
            else:
                break
        idx.append(i)
    return np.asarray(idx)


@dataclass(frozen=True)
class EnvelopeResult:
    """Convex envelope delta of T~ for a weighting ``T``."""

    weighting: WeightingFunction
    representation: Representation
    shape: ShapeReport
    fi_mass: float
    pstar: float | None = None
    slope: float | None = None
    knots: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def ttilde(self) -> WeightingFunction:
        return conjugate(self.weighting)

    @property
    def contact_set(self) -> str:
        r = self.representation
        if r is Representation.IDENTITY:
            if self.shape.shape is Shape.LINEAR:
                return "[0, 1]"
            return "{0, 1}"
        if r is Representation.COINCIDES:
            return "[0, 1]"
        if r is Representation.ANALYTIC_INVERSE_S:
            return f"{{0}} U [{self.pstar:.12g}, 1]"
        if r is Representation.ANALYTIC_S:
            return f"[0, {self.pstar:.12g}] U {{1}}"
        segs = self.affine_intervals()
        return "complement of " + ", ".join(f"({a:.6g}, {b:.6g})" for a, b in segs) if segs else "[0, 1]"

    # evaluation ---------------------------------------------------------------

    def value_pair(self, u, s):
        u = np.asarray(u, dtype=float)
        s = np.asarray(s, dtype=float)
        T = self.weighting
        r = self.representation
        if r is Representation.IDENTITY:
            return u.copy()
        if r is Representation.HULL:
            return np.interp(u, self.knots[:, 0], self.knots[:, 1])
        with np.errstate(all="ignore"):
            tt = T.cvalue(s, u)
        if r is Representation.COINCIDES:
            return tt
        if r is Representation.ANALYTIC_INVERSE_S:
            return np.where(u <= self.pstar, self.slope * u, tt)
        return np.where(u >= self.pstar, 1.0 - self.slope * s, tt)

    def deriv_pair(self, u, s):
        """delta'(u) with s = 1 - u supplied for accuracy near u = 1."""
        u = np.asarray(u, dtype=float)
        s = np.asarray(s, dtype=float)
        T = self.weighting
        r = self.representation
        if r is Representation.IDENTITY:
            return np.ones_like(u)
        if r is Representation.COINCIDES:
            with np.errstate(all="ignore"):
                return T.d1(s, u)
        if r is Representation.HULL:
            kt = self.knots[:, 0]
            slopes = np.diff(self.knots[:, 1]) / np.diff(kt)
            j = np.clip(np.searchsorted(kt, u, side="left") - 1, 0, len(slopes) - 1)
            return slopes[j]
        if r is Representation.ANALYTIC_INVERSE_S:
            flat = u <= self.pstar
        else:
            flat = u > self.pstar
        with np.errstate(all="ignore"):
            d = T.d1(s, u)
        return np.where(flat, self.slope, d)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.value_pair(t, 1.0 - t)
        return float(out) if out.ndim == 0 else out

    def deriv(self, t):
        """Left-continuous delta'(t) on (0, 1)."""
        t = np.asarray(t, dtype=float)
        out = self.deriv_pair(t, 1.0 - t)
        return float(out) if out.ndim == 0 else out

    def affine_intervals(self) -> list[tuple[float, float]]:
        """Maximal intervals on which delta is affine and detaches from T~."""
        r = self.representation
        if r is Representation.IDENTITY:
            return [(0.0, 1.0)]
        if r is Representation.COINCIDES:
            return []
        if r is Representation.ANALYTIC_INVERSE_S:
            return [(0.0, self.pstar)]
        if r is Representation.ANALYTIC_S:
            return [(self.pstar, 1.0)]
        kt = self.knots[:, 0]
        step = 1.5 / self._resolution
        gaps = np.diff(kt)
        return [(float(kt[i]), float(kt[i + 1])) for i in np.flatnonzero(gaps > step)]

    @property
    def _resolution(self) -> int:
        return int(self.knots[-1, 2]) if self.knots is not None and self.knots.shape[1] > 2 else HULL_RESOLUTION - 1

    def summary(self) -> dict:
        return {
            "shape": self.shape.shape.value,
            "inflection": self.shape.inflection,
            "representation": self.representation.value,
            "pstar": self.pstar,
            "slope": self.slope,
            "fi_mass": self.fi_mass,
            "contact_set": self.contact_set,
        }

    def table(self, resolution: int = 1001) -> np.ndarray:
        """Rows (t, T~(t), delta(t), delta'(t)) on a uniform grid of (0, 1)."""
        t = (np.arange(resolution) + 0.5) / resolution
        s = 1.0 - t
        with np.errstate(all="ignore"):
            tt = self.weighting.cvalue(s, t)
        return np.column_stack([t, tt, self.value_pair(t, s), self.deriv_pair(t, s)])

    def to_csv(self, resolution: int = 1001) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "Ttilde", "delta", "delta_prime"])
        for row in self.table(resolution):
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _hull_result(T: WeightingFunction, rep: ShapeReport, resolution: int) -> EnvelopeResult:
    n = resolution - 1
    k = np.arange(resolution)
    u = k / n
    s = (n - k) / n
    with np.errstate(all="ignore"):
        y = np.where(k == 0, 0.0, np.where(k == n, 1.0, T.cvalue(s, u)))
    idx = hull_envelope(u, y)
    knots = np.column_stack([u[idx], y[idx], np.full(idx.size, float(n))])
    gaps = np.diff(knots[:, 0])
    fi = float(gaps[gaps > 1.5 / n].sum())
    return EnvelopeResult(T, Representation.HULL, rep, fi, knots=knots)


def build_envelope(
    T: WeightingFunction,
    *,
    resolution: int = HULL_RESOLUTION,
    force_hull: bool = False,
    refine: bool = False,
) -> EnvelopeResult:
    """Dispatch on the shape of ``T`` and build the convex envelope of T~.

    ``force_hull`` skips the analytic branches.  With ``refine`` the hull is
    recomputed at ``REFINE_RESOLUTION`` points and the FI masses must agree to
    1e-4.
    """
    rep = classify(T)
    if not force_hull:
        if rep.shape in (Shape.LINEAR, Shape.CONVEX):
            return EnvelopeResult(T, Representation.IDENTITY, rep, 1.0, slope=1.0)
        if rep.shape is Shape.CONCAVE:
            return EnvelopeResult(T, Representation.COINCIDES, rep, 0.0)
        if rep.shape is Shape.INVERSE_S_SHAPED:
            if T.endpoint_slope(0) <= 1.0:
                # T~'(1) <= 1: the diagonal chord lies below T~ and touches only at 1
                return EnvelopeResult(T, Representation.IDENTITY, rep, 1.0, pstar=1.0, slope=1.0)
            p = tangent_point_inverse_s(T, rep)
            slope = float(T.cvalue(np.array(1.0 - p), np.array(p))) / p
            return EnvelopeResult(T, Representation.ANALYTIC_INVERSE_S, rep, p, pstar=p, slope=slope)
        if rep.shape is Shape.S_SHAPED:
            if T.endpoint_slope(1) >= 1.0:
                # T~'(0) >= 1: the diagonal chord lies below T~ and touches only at 0
                return EnvelopeResult(T, Representation.IDENTITY, rep, 1.0, pstar=0.0, slope=1.0)
            p = tangent_point_s(T, rep)
            slope = float(T.value(np.array(1.0 - p), np.array(p))) / (1.0 - p)
            return EnvelopeResult(T, Representation.ANALYTIC_S, rep, 1.0 - p, pstar=p, slope=slope)
    res = _hull_result(T, rep, resolution)
    if refine:
        fine = _hull_result(T, rep, REFINE_RESOLUTION)
        if abs(fine.fi_mass - res.fi_mass) >= 1e-4:
            raise DegenerateEnvelope(
                f"hull FI mass not converged: {res.fi_mass:.6g} at {resolution} vs {fine.fi_mass:.6g} at {REFINE_RESOLUTION}"
            )
        res = fine
    return res


def nudged_envelope(E: EnvelopeResult, f: float) -> EnvelopeResult:
    """Envelope of the mixture (1 - f) T + f id, obtained from ``E`` directly.

    Mixing with the identity keeps the tangent point and scales the affine
    slope to (1 - f) slope + f.  At f = 1 the envelope is the identity.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"mixing weight must be in [0, 1], got {f}")
    T = E.weighting
    if f == 0.0:
        return E
    TM = Mixture(T, f) if not isinstance(T, Mixture) else Mixture(T.base, 1.0 - (1.0 - T.weight) * (1.0 - f))
    if f == 1.0 or E.representation is Representation.IDENTITY:
        shape = ShapeReport(Shape.LINEAR) if f == 1.0 else E.shape
        return EnvelopeResult(TM, Representation.IDENTITY, shape, 1.0, slope=1.0)
    slope = None if E.slope is None else (1.0 - f) * E.slope + f
    knots = None
    if E.knots is not None:
        knots = E.knots.copy()
        knots[:, 1] = (1.0 - f) * knots[:, 1] + f * knots[:, 0]
    return replace(E, weighting=TM, slope=slope, knots=knots)
