"""Probability weighting functions, their conjugates and shape classification.

Every family implements ``value``, ``d1`` and ``d2`` on a pair ``(p, q)`` with
``q = 1 - p`` supplied by the caller.  Passing the complement explicitly keeps
evaluations accurate close to either endpoint, which matters for the
conjugate ``T~(t) = 1 - T(1 - t)`` whose derivative near ``t = 1`` is ``T'``
near 0.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from scipy import optimize

LINEAR_TOL = 1e-9
SHAPE_GRID = 10_001
SHAPE_EPS = 1e-10


class ConfigurationError(ValueError):
    """Invalid model parameters or configuration blocks."""


class EndpointSingularity(ArithmeticError):
    """A derivative was requested at an endpoint where it is unbounded."""


class Shape(str, Enum):
    CONVEX = "Convex"
    CONCAVE = "Concave"
    LINEAR = "Linear"
    S_SHAPED = "SShaped"
    INVERSE_S_SHAPED = "InverseSShaped"
    OTHER = "Other"


_MIRROR = {
    Shape.CONVEX: Shape.CONCAVE,
    Shape.CONCAVE: Shape.CONVEX,
}


@dataclass(frozen=True)
class ShapeReport:
    shape: Shape
    inflection: float | None = None


def _as_array(p):
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise ValueError("probabilities must lie in [0, 1]")
    return arr


def _unwrap(arr: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


class WeightingFunction(ABC):
    """A distortion T: [0, 1] -> [0, 1], increasing, with T(0)=0 and T(1)=1."""

    @abstractmethod
    def value(self, p: np.ndarray, q: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d1(self, p: np.ndarray, q: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d2(self, p: np.ndarray, q: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def endpoint_slope(self, side: int) -> float:
        """One-sided limit of T' at p=0 (``side=0``) or p=1 (``side=1``)."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...

    def cvalue(self, p, q):
        """1 - T(p), overridden where a cancellation-free form exists."""
        return 1.0 - self.value(p, q)

    def endpoint_curvature(self, side: int) -> float:
        raise EndpointSingularity(f"second derivative of {self!r} is not available at p={side}")

    # public, single-argument interface -------------------------------------

    def __call__(self, p):
        arr = _as_array(p)
        out = np.where(arr == 0.0, 0.0, np.where(arr == 1.0, 1.0, 0.0))
        inner = (arr > 0.0) & (arr < 1.0)
        if np.any(inner):
            pi = arr[inner]
            out = out.astype(float)
            out[inner] = self.value(pi, 1.0 - pi)
        return _unwrap(out, p)

    def _deriv(self, p, order: int):
        arr = _as_array(p)
        out = np.empty(arr.shape)
        inner = (arr > 0.0) & (arr < 1.0)
        if np.any(inner):
            pi = arr[inner]
            fn = self.d1 if order == 1 else self.d2
            out[inner] = fn(pi, 1.0 - pi)
        for side in (0, 1):
            mask = arr == float(side)
            if np.any(mask):
                lim = self.endpoint_slope(side) if order == 1 else self.endpoint_curvature(side)
                if not math.isfinite(lim):
                    raise EndpointSingularity(
                        f"derivative of order {order} is unbounded at p={side} for {self!r}; "
                        "use open-interval evaluation"
                    )
                out[mask] = lim
        return _unwrap(out, p)

    def deriv(self, p):
        return self._deriv(p, 1)

    def deriv2(self, p):
        return self._deriv(p, 2)

    def conjugate(self) -> "WeightingFunction":
        return conjugate(self)

    def classify(self) -> ShapeReport:
        return classify(self)


# --- families ---------------------------------------------------------------


@dataclass(frozen=True)
class Linear(WeightingFunction):
    def value(self, p, q):
        return np.asarray(p, dtype=float)

    def cvalue(self, p, q):
        return np.asarray(q, dtype=float)

    def d1(self, p, q):
        return np.ones_like(np.asarray(p, dtype=float))

    def d2(self, p, q):
        return np.zeros_like(np.asarray(p, dtype=float))

    def endpoint_slope(self, side):
        return 1.0

    def endpoint_curvature(self, side):
        return 0.0

    def to_dict(self):
        return {"family": "linear"}


@dataclass(frozen=True)
class Prelec(WeightingFunction):
    """T(p) = exp(-(-ln p)^alpha)."""

    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ConfigurationError(f"Prelec alpha must be > 0, got {self.alpha}")

    @property
    def is_linear(self) -> bool:
        return abs(self.alpha - 1.0) < LINEAR_TOL

    @staticmethod
    def _y(p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(p < 0.5, -np.log(np.where(p < 0.5, p, 0.5)), -np.log1p(-np.where(p < 0.5, 0.5, q)))

    def value(self, p, q):
        return np.exp(-self._y(p, q) ** self.alpha)

    def cvalue(self, p, q):
        return -np.expm1(-self._y(p, q) ** self.alpha)

    def d1(self, p, q):
        a = self.alpha
        y = self._y(p, q)
        # alpha*y^(a-1)*T/p written as exp of a sum to survive tiny p
        return a * np.exp((a - 1.0) * np.log(y) - y ** a + y)

    def d2(self, p, q):
        a = self.alpha
        y = self._y(p, q)
        bracket = (a - 1.0) * y ** (a - 2.0) - a * y ** (2.0 * a - 2.0) + y ** (a - 1.0)
        return -a * np.exp(-y ** a + 2.0 * y) * bracket

    def endpoint_slope(self, side):
        if self.is_linear:
            return 1.0
        return math.inf if self.alpha < 1.0 else 0.0

    def endpoint_curvature(self, side):
        if self.is_linear:
            return 0.0
        return super().endpoint_curvature(side)

    def inflection(self) -> float | None:
        """Inflection point of T; solves (a-1) - a*y^a + y = 0 with y = -ln p."""
        a = self.alpha
        if self.is_linear:
            return None
        h = lambda y: (a - 1.0) - a * y ** a + y
        lo, hi = 1e-12, 1.0
        while h(lo) * h(hi) > 0.0:
            hi *= 2.0
            if hi > 1e6:
                return None
        y = optimize.brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return math.exp(-y)

    def to_dict(self):
        return {"family": "prelec", "alpha": self.alpha}


@dataclass(frozen=True)
class TverskyKahneman(WeightingFunction):
    """T(p) = p^g / (p^g + (1-p)^g)^(1/g)."""

    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0.0):
            raise ConfigurationError(f"Tversky-Kahneman gamma must be > 0, got {self.gamma}")

    def _parts(self, p, q):
        g = self.gamma
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        pg, qg = p ** g, q ** g
        d = pg + qg
        logt = g * np.log(p) - np.log(d) / g
        a = g / p - (p ** (g - 1.0) - q ** (g - 1.0)) / d
        return p, q, d, logt, a

    def value(self, p, q):
        return np.exp(self._parts(p, q)[3])

    def d1(self, p, q):
        _, _, _, logt, a = self._parts(p, q)
        return np.exp(logt) * a

    def d2(self, p, q):
        g = self.gamma
        p, q, d, logt, a = self._parts(p, q)
        num = g - 1.0
        dd = g * (p ** (g - 1.0) - q ** (g - 1.0))
        da = -g / p ** 2 - (num * (p ** (g - 2.0) + q ** (g - 2.0)) * d - (p ** (g - 1.0) - q ** (g - 1.0)) * dd) / d ** 2
        return np.exp(logt) * (a * a + da)

    def endpoint_slope(self, side):
        g = self.gamma
        if abs(g - 1.0) < LINEAR_TOL:
            return 1.0
        if g < 1.0:
            return math.inf
        return 0.0 if side == 0 else g - 1.0

    def to_dict(self):
        return {"family": "tk", "gamma": self.gamma}


@dataclass(frozen=True)
class Hurwicz(WeightingFunction):
    """Weighting induced by Hurwicz expected utility (ambiguity index gamma, perception kappa)."""

    gamma: float
    kappa: float

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigurationError(f"HEU gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 <= self.kappa < 1.0):
            raise ConfigurationError(f"HEU kappa must be in [0, 1), got {self.kappa}")

    def _den(self, p, q):
        k = self.kappa
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return p, q, (1 + k) * q + (1 - k) * p, (1 - k) * q + (1 + k) * p

    def value(self, p, q):
        g, k = self.gamma, self.kappa
        p, q, da, db = self._den(p, q)
        return g * (1 - k) * p / da + (1 - g) * (1 + k) * p / db

    def cvalue(self, p, q):
        g, k = self.gamma, self.kappa
        p, q, da, db = self._den(p, q)
        return g * (1 + k) * q / da + (1 - g) * (1 - k) * q / db

    def d1(self, p, q):
        g, k = self.gamma, self.kappa
        _, _, da, db = self._den(p, q)
        c = (1 - k) * (1 + k)
        return g * c / da ** 2 + (1 - g) * c / db ** 2

    def d2(self, p, q):
        g, k = self.gamma, self.kappa
        _, _, da, db = self._den(p, q)
        c = 4.0 * k * (1 - k) * (1 + k)
        return g * c / da ** 3 - (1 - g) * c / db ** 3

    def endpoint_slope(self, side):
        p = np.array(float(side))
        return float(self.d1(p, 1.0 - p))

    def endpoint_curvature(self, side):
        p = np.array(float(side))
        return float(self.d2(p, 1.0 - p))

    def to_dict(self):
        return {"family": "heu", "gamma": self.gamma, "kappa": self.kappa}


@dataclass(frozen=True)
class Mixture(WeightingFunction):
    """(1 - weight) * base + weight * identity."""

    base: WeightingFunction
    weight: float

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0):
            raise ConfigurationError(f"mixture weight must be in [0, 1], got {self.weight}")

    def value(self, p, q):
        return (1 - self.weight) * self.base.value(p, q) + self.weight * np.asarray(p, dtype=float)

    def cvalue(self, p, q):
        return (1 - self.weight) * self.base.cvalue(p, q) + self.weight * np.asarray(q, dtype=float)

    def d1(self, p, q):
        return (1 - self.weight) * self.base.d1(p, q) + self.weight

    def d2(self, p, q):
        return (1 - self.weight) * self.base.d2(p, q)

    def endpoint_slope(self, side):
        if self.weight == 1.0:
            return 1.0
        return (1 - self.weight) * self.base.endpoint_slope(side) + self.weight

    def endpoint_curvature(self, side):
        if self.weight == 1.0:
            return 0.0
        return (1 - self.weight) * self.base.endpoint_curvature(side)

    def to_dict(self):
        return {"family": "mixture", "base": self.base.to_dict(), "weight": self.weight}


@dataclass(frozen=True)
class Rescaled(WeightingFunction):
    """T(p) = base(c p) / base(c): the restriction of ``base`` to [0, c], renormalised."""

    base: WeightingFunction
    scale: float

    def __post_init__(self):
        if not (0.0 < self.scale <= 1.0):
            raise ConfigurationError(f"rescale factor must be in (0, 1], got {self.scale}")

    @property
    def _norm(self) -> float:
        return float(self.base(self.scale))

    def value(self, p, q):
        cp = self.scale * np.asarray(p, dtype=float)
        return self.base.value(cp, 1.0 - cp) / self._norm

    def d1(self, p, q):
        cp = self.scale * np.asarray(p, dtype=float)
        return self.scale * self.base.d1(cp, 1.0 - cp) / self._norm

    def d2(self, p, q):
        cp = self.scale * np.asarray(p, dtype=float)
        return self.scale ** 2 * self.base.d2(cp, 1.0 - cp) / self._norm

    def endpoint_slope(self, side):
        if side == 0:
            return self.scale * self.base.endpoint_slope(0) / self._norm
        if self.scale < 1.0:
            return float(self.d1(np.array(1.0), np.array(0.0)))
        return self.base.endpoint_slope(1) / self._norm

    def to_dict(self):
        return {"family": "rescaled", "base": self.base.to_dict(), "scale": self.scale}


@dataclass(frozen=True)
class Conjugate(WeightingFunction):
    """T~(t) = 1 - base(1 - t)."""

    base: WeightingFunction

    def value(self, p, q):
        return self.base.cvalue(q, p)

    def cvalue(self, p, q):
        return self.base.value(q, p)

    def d1(self, p, q):
        return self.base.d1(q, p)

    def d2(self, p, q):
        return -self.base.d2(q, p)

    def endpoint_slope(self, side):
        return self.base.endpoint_slope(1 - side)

    def endpoint_curvature(self, side):
        return -self.base.endpoint_curvature(1 - side)

    def to_dict(self):
        return {"family": "conjugate", "base": self.base.to_dict()}


def conjugate(T: WeightingFunction) -> WeightingFunction:
    """Return T~ with T~(t) = 1 - T(1 - t); exact involution on Conjugate."""
    if isinstance(T, Conjugate):
        return T.base
    if isinstance(T, Linear):
        return T
    return Conjugate(T)


def is_linear(T: WeightingFunction) -> bool:
    if isinstance(T, Linear):
        return True
    if isinstance(T, Prelec):
        return T.is_linear
    if isinstance(T, TverskyKahneman):
        return abs(T.gamma - 1.0) < LINEAR_TOL
    if isinstance(T, Mixture):
        return T.weight == 1.0 or is_linear(T.base)
    if isinstance(T, (Conjugate, Rescaled)):
        return is_linear(T.base) if isinstance(T, Conjugate) else isinstance(T.base, Linear)
    return False


def classify(T: WeightingFunction, grid: int = SHAPE_GRID) -> ShapeReport:
    """Shape of T from the sign pattern of T''.

    Prelec uses the closed-form rule; everything else scans ``grid`` uniform
    points and only counts a sign change when |T''| exceeds ``SHAPE_EPS`` on
    both sides of it.
    """
    if is_linear(T):
        return ShapeReport(Shape.LINEAR)
    if isinstance(T, Prelec):
        shape = Shape.INVERSE_S_SHAPED if T.alpha < 1.0 else Shape.S_SHAPED
        return ShapeReport(shape, T.inflection())
    if isinstance(T, Mixture):
        # (1 - f) T'' has the sign pattern of T''
        return classify(T.base, grid)
    if isinstance(T, Conjugate):
        rep = classify(T.base, grid)
        infl = None if rep.inflection is None else 1.0 - rep.inflection
        return ShapeReport(_MIRROR.get(rep.shape, rep.shape), infl)

    p = np.linspace(0.0, 1.0, grid)[1:-1]
    with np.errstate(all="ignore"):
        d2 = np.asarray(T.d2(p, 1.0 - p), dtype=float)
    sign = np.where(d2 > SHAPE_EPS, 1, np.where(d2 < -SHAPE_EPS, -1, 0))
    nz = np.flatnonzero(sign)
    if nz.size == 0:
        return ShapeReport(Shape.LINEAR)
    s = sign[nz]
    changes = np.flatnonzero(np.diff(s))
    if changes.size == 0:
        return ShapeReport(Shape.CONVEX if s[0] > 0 else Shape.CONCAVE)
    if changes.size > 1:
        return ShapeReport(Shape.OTHER)
    i_left, i_right = nz[changes[0]], nz[changes[0] + 1]
    lo, hi = p[i_left], p[i_right]
    f = lambda x: float(T.d2(np.array(x), np.array(1.0 - x)))
    infl = optimize.brentq(f, lo, hi, xtol=1e-14) if f(lo) * f(hi) < 0 else 0.5 * (lo + hi)
    shape = Shape.S_SHAPED if s[0] > 0 else Shape.INVERSE_S_SHAPED
    return ShapeReport(shape, float(infl))


def from_dict(spec: dict[str, Any]) -> WeightingFunction:
    """Build a weighting function from a JSON parameter block."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigurationError(f"weighting block needs a 'family' key: {spec!r}")
    fam = str(spec["family"]).lower()
    try:
        if fam == "linear":
            return Linear()
        if fam == "prelec":
            return Prelec(float(spec["alpha"]))
        if fam in ("tk", "tversky_kahneman", "tverskykahneman"):
            return TverskyKahneman(float(spec["gamma"]))
        if fam in ("heu", "hurwicz"):
            return Hurwicz(float(spec["gamma"]), float(spec["kappa"]))
        if fam == "mixture":
            return Mixture(from_dict(spec["base"]), float(spec["weight"]))
        if fam == "rescaled":
            return Rescaled(from_dict(spec["base"]), float(spec["scale"]))
        if fam == "conjugate":
            return conjugate(from_dict(spec["base"]))
    except KeyError as exc:
        raise ConfigurationError(f"weighting block {spec!r} is missing {exc}") from None
    raise ConfigurationError(f"unknown weighting family {fam!r}")
