"""Planner's nudging problem: pay M to mix the RDU agent's weighting toward the identity."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .distortion import ConfigurationError, Mixture, WeightingFunction
from .economy import AllocationDistribution, Economy, Utility
from .envelope import EnvelopeResult, Representation, build_envelope, nudged_envelope
from .quadrature import integrate_unit
from .welfare import _expected_utility


class SingularSensitivity(ArithmeticError):
    """The denominator of the allocation sensitivity vanishes."""


class MultimodalValueWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class NudgeConfig:
    """Two-agent nudging problem with cost curve f(M) = 1 - (1 - M/w)^k."""

    weighting: WeightingFunction
    u1: Utility
    u2: Utility
    lam2: float = 1.0
    w: float = 1.0
    k: float = 20.0
    fast: bool = True
    scan: int = 41
    xtol: float = 1e-6
    envelope: EnvelopeResult | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.k > 1.0:
            raise ConfigurationError(f"cost curvature k must exceed 1, got {self.k}")
        if not self.w > 0.0:
            raise ConfigurationError(f"endowment w must be positive, got {self.w}")
        if self.envelope is None:
            object.__setattr__(self, "envelope", build_envelope(self.weighting))

    @classmethod
    def from_economy(cls, econ: Economy, k: float = 20.0, **kw) -> "NudgeConfig":
        """Collapse the EU agents into the representative agent u_lambda."""
        if len(econ.eu) == 1:
            u2, lam2 = econ.eu[0], econ.lambdas[0]
        else:
            u2, lam2 = econ.aggregate, 1.0
        return cls(econ.weighting, econ.rdu, u2, lam2, econ.w, k, fast=econ.fast, **kw)

    def f(self, M):
        M = np.asarray(M, dtype=float)
        return 1.0 - (1.0 - M / self.w) ** self.k

    def df(self, M):
        M = np.asarray(M, dtype=float)
        return (self.k / self.w) * (1.0 - M / self.w) ** (self.k - 1.0)


def nudged_weighting(T: WeightingFunction, f: float) -> WeightingFunction:
    """T_M = (1 - f) T + f id."""
    return Mixture(T, float(f))


def _economy(cfg: NudgeConfig, M: float) -> Economy:
    return Economy(nudged_weighting(cfg.weighting, float(cfg.f(M))), cfg.u1, (cfg.u2,), (cfg.lam2,), cfg.w - M, cfg.fast)


def allocation_at_effort(cfg: NudgeConfig, M: float) -> AllocationDistribution:
    """Optimal allocation (x_M, w - M - x_M) at effort ``M``."""
    if not 0.0 <= M <= cfg.w:
        raise ValueError(f"effort must lie in [0, {cfg.w}], got {M}")
    E = nudged_envelope(cfg.envelope, float(cfg.f(M)))
    return AllocationDistribution(_economy(cfg, M), E)


def sensitivity(cfg: NudgeConfig, M: float, t) -> np.ndarray:
    """d x_M(t) / dM from implicit differentiation of the first-order condition."""
    t = np.asarray(t, dtype=float)
    alloc = allocation_at_effort(cfg, M)
    x = alloc.x1(t)
    d = cfg.envelope.deriv(t)
    z = cfg.w - M - x
    u1p, u1pp = cfg.u1.du(x), cfg.u1.d2u(x)
    u2p, u2pp = cfg.u2.du(z), cfg.u2.d2u(z)
    lam = cfg.lam2
    Lam = -(lam / u1p) * (u2pp + u2p * u1pp / u1p)
    if np.any(np.abs(Lam) < 1e-300):
        raise SingularSensitivity(f"Lambda vanishes at M={M}")
    return (cfg.df(M) * (1.0 - d) + lam * u2pp / u1p) / Lam


def value(cfg: NudgeConfig, M: float, *, tol: float = 1e-12) -> float:
    """Planner's welfare V(M) evaluated under the nudged weighting."""
    alloc = allocation_at_effort(cfg, M)
    v1 = _expected_utility(alloc, 0, True, tol).value
    v2 = _expected_utility(alloc, 1, False, tol).value
    return v1 + cfg.lam2 * v2


def foc_residual(cfg: NudgeConfig, M: float, *, tol: float = 1e-12) -> float:
    """dV/dM as the integral first-order condition."""
    alloc = allocation_at_effort(cfg, M)
    E = cfg.envelope
    if E.representation is Representation.HULL:
        raise NotImplementedError("the integral FOC needs a smooth envelope")
    T = E.weighting
    fM, dfM = float(cfg.f(M)), float(cfg.df(M))
    lam = cfg.lam2

    def g(u, s):
        x = alloc.x1(u, s)
        with np.errstate(all="ignore"):
            tp = T.d1(s, u)
            d = E.deriv_pair(u, s)
        z = cfg.w - M - x
        u1p, u1pp = cfg.u1.du(x), cfg.u1.d2u(x)
        u2p, u2pp = cfg.u2.du(z), cfg.u2.d2u(z)
        Lam = -(lam / u1p) * (u2pp + u2p * u1pp / u1p)
        xp = (dfM * (1.0 - d) + lam * u2pp / u1p) / Lam
        tpm = (1.0 - fM) * tp + fM
        out = u1p * xp * tpm + cfg.u1.u(x) * dfM * (1.0 - tp) - lam * u2p * (1.0 + xp)
        return np.where(np.isfinite(tp), out, 0.0)

    cuts = sorted({0.0, 1.0, *(p for iv in E.affine_intervals() for p in iv)})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += integrate_unit(g, a, b, tol=tol).value
    return total


@dataclass(frozen=True)
class NudgeSolution:
    M_star: float
    V_star: float
    grid: np.ndarray
    values: np.ndarray
    foc_residual: float
    boundary: bool
    fi_mass: float
    multimodal: bool
    allocation: AllocationDistribution = field(repr=False)


def optimal_effort(cfg: NudgeConfig) -> NudgeSolution:
    """Maximise V over [0, w] by a coarse scan followed by bounded Brent refinement."""
    Ms = np.linspace(0.0, cfg.w, cfg.scan)
    Vs = np.array([value(cfg, m) for m in Ms])
    i = int(np.argmax(Vs))
    peaks = [j for j in range(len(Vs)) if (j == 0 or Vs[j] > Vs[j - 1]) and (j == len(Vs) - 1 or Vs[j] >= Vs[j + 1])]
    multimodal = len(peaks) > 1
    if multimodal:
        warnings.warn(f"V(M) has {len(peaks)} local maxima on the scan; returning the global one", MultimodalValueWarning)

    lo, hi = Ms[max(i - 1, 0)], Ms[min(i + 1, len(Ms) - 1)]
    res = optimize.minimize_scalar(lambda m: -value(cfg, m), bounds=(lo, hi), method="bounded",
                                   options={"xatol": cfg.xtol * 1e-2})
    M, V = float(res.x), float(-res.fun)
    if Vs[i] >= V:
        M, V = float(Ms[i]), float(Vs[i])

    boundary = False
    if i == 0 and M <= cfg.xtol:
        slope = foc_residual(cfg, 0.0)
        if slope <= 0.0:
            M, V, boundary = 0.0, float(Vs[0]), True
    elif i == len(Ms) - 1 and M >= cfg.w - cfg.xtol:
        M, V, boundary = float(cfg.w), float(Vs[-1]), True

    resid = foc_residual(cfg, M) if M < cfg.w else math.nan
    if not boundary and abs(resid) >= 1e-6:
        # polish on the FOC when the derivative-free step stopped short
        a, b = max(M - 10 * cfg.xtol, 0.0), min(M + 10 * cfg.xtol, cfg.w)
        fa, fb = foc_residual(cfg, a), foc_residual(cfg, b)
        if fa > 0.0 > fb:
            M = float(optimize.brentq(lambda m: foc_residual(cfg, m), a, b, xtol=1e-14))
            V = value(cfg, M)
            resid = foc_residual(cfg, M)

    alloc = allocation_at_effort(cfg, M)
    return NudgeSolution(M, V, Ms, Vs, resid, boundary, alloc.envelope.fi_mass, multimodal, alloc)
