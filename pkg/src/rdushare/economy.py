"""Agents, the aggregate EU agent and Pareto-optimal allocations.

The RDU agent (index 0) receives ``X1 = m^{-1}(delta'(U))`` for a uniform
variate ``U``; the expected-utility agents split the rest of the aggregate
endowment along the Borch rule.  Every payoff is a deterministic function of
the same ``U``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import expit

from .distortion import ConfigurationError, Linear, WeightingFunction, from_dict as weighting_from_dict
from .envelope import EnvelopeResult, Representation, build_envelope


class NumericDomainError(ArithmeticError):
    """A monotone inversion left the range of the function being inverted."""


class UnsupportedFastPath(TypeError):
    """A closed form was requested for a roster it does not cover."""


def monotone_inverse(
    fn: Callable[[np.ndarray], np.ndarray],
    y,
    *,
    increasing: bool,
    lo: float = -1.0,
    hi: float = 1.0,
    bounds: tuple[float, float] = (-math.inf, math.inf),
    tol: float = 1e-12,
    max_iter: int = 400,
) -> np.ndarray:
    """Solve fn(x) = y elementwise for a monotone, vectorised ``fn``.

    The bracket [lo, hi] grows outward (toward ``bounds`` when they are
    finite) until it contains every root, then plain bisection runs until the
    bracket is below ``tol`` relative to max(1, |x|).
    """
    y = np.asarray(y, dtype=float)
    sgn = 1.0 if increasing else -1.0
    a = np.full(y.shape, float(lo))
    b = np.full(y.shape, float(hi))
    blo, bhi = bounds

    def below(x):  # fn(x) < y in the increasing orientation
        with np.errstate(all="ignore"):
            return sgn * (np.asarray(fn(x), dtype=float) - y) < 0.0

    for _ in range(200):
        bad_a = ~below(a)
        bad_b = below(b)
        if not (bad_a.any() or bad_b.any()):
            break
        w = b - a
        if math.isfinite(blo):
            a = np.where(bad_a, blo + 0.5 * (a - blo), a)
        else:
            a = np.where(bad_a, a - 2.0 * w, a)
        if math.isfinite(bhi):
            b = np.where(bad_b, bhi - 0.5 * (bhi - b), b)
        else:
            b = np.where(bad_b, b + 2.0 * w, b)
    else:
        raise NumericDomainError(f"could not bracket {int((bad_a | bad_b).sum())} target values, e.g. y={y[bad_a | bad_b].ravel()[:3]}")
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        go_right = below(mid)
        a = np.where(go_right, mid, a)
        b = np.where(go_right, b, mid)
        if np.all(b - a <= tol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (a + b)


# --- utilities ----------------------------------------------------------------


class Utility(ABC):
    """Increasing, strictly concave utility of wealth."""

    domain: tuple[float, float] = (-math.inf, math.inf)

    @abstractmethod
    def u(self, x): ...

    @abstractmethod
    def du(self, x): ...

    @abstractmethod
    def d2u(self, x): ...

    def inv_marginal(self, y):
        """I = (u')^{-1}."""
        y = np.asarray(y, dtype=float)
        return monotone_inverse(self.du, y, increasing=False, bounds=self.domain, **self._bracket())

    def inverse(self, v):
        """u^{-1}, used for certainty equivalents."""
        v = np.asarray(v, dtype=float)
        return monotone_inverse(self.u, v, increasing=True, bounds=self.domain, **self._bracket())

    def _bracket(self):
        lo, hi = self.domain
        if math.isfinite(lo) and math.isfinite(hi):
            return {"lo": lo + 0.25 * (hi - lo), "hi": hi - 0.25 * (hi - lo)}
        if math.isfinite(lo):
            return {"lo": lo + 0.5, "hi": lo + 2.0}
        if math.isfinite(hi):
            return {"lo": hi - 2.0, "hi": hi - 0.5}
        return {"lo": -1.0, "hi": 1.0}

    def to_dict(self) -> dict[str, Any]:
        raise ConfigurationError(f"{type(self).__name__} has no JSON form")


@dataclass(frozen=True)
class CARA(Utility):
    """u(x) = -exp(-beta x) / beta."""

    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ConfigurationError(f"CARA beta must be > 0, got {self.beta}")

    def u(self, x):
        return -np.exp(-self.beta * np.asarray(x, dtype=float)) / self.beta

    def du(self, x):
        return np.exp(-self.beta * np.asarray(x, dtype=float))

    def d2u(self, x):
        return -self.beta * np.exp(-self.beta * np.asarray(x, dtype=float))

    def inv_marginal(self, y):
        return -np.log(np.asarray(y, dtype=float)) / self.beta

    def inverse(self, v):
        return -np.log(-self.beta * np.asarray(v, dtype=float)) / self.beta

    def to_dict(self):
        return {"family": "cara", "beta": self.beta}


@dataclass(frozen=True)
class GenericUtility(Utility):
    """Utility given by callables; inverses default to monotone bisection."""

    fu: Callable
    fdu: Callable
    fd2u: Callable
    finv_marginal: Callable | None = None
    domain: tuple[float, float] = (-math.inf, math.inf)

    def u(self, x):
        return np.asarray(self.fu(np.asarray(x, dtype=float)), dtype=float)

    def du(self, x):
        return np.asarray(self.fdu(np.asarray(x, dtype=float)), dtype=float)

    def d2u(self, x):
        return np.asarray(self.fd2u(np.asarray(x, dtype=float)), dtype=float)

    def inv_marginal(self, y):
        if self.finv_marginal is not None:
            return np.asarray(self.finv_marginal(np.asarray(y, dtype=float)), dtype=float)
        return super().inv_marginal(y)

    def validate(self, grid: np.ndarray) -> None:
        if np.any(self.du(grid) <= 0.0) or np.any(self.d2u(grid) >= 0.0):
            raise ConfigurationError("utility must have u' > 0 and u'' < 0 on its working domain")
        back = self.inv_marginal(self.du(grid))
        if np.max(np.abs(back - grid)) > 1e-9 * max(1.0, float(np.max(np.abs(grid)))):
            raise ConfigurationError("inverse marginal utility does not invert u'")


def generic_cara(beta: float) -> GenericUtility:
    """CARA written through the generic interface, without closed-form inverses."""
    return GenericUtility(
        lambda x: -np.exp(-beta * x) / beta,
        lambda x: np.exp(-beta * x),
        lambda x: -beta * np.exp(-beta * x),
    )


def utility_from_dict(spec: dict[str, Any]) -> Utility:
    fam = str(spec.get("family", "cara")).lower()
    if fam != "cara":
        raise ConfigurationError(f"only CARA utilities can be read from JSON, got {fam!r}")
    try:
        return CARA(float(spec["beta"]))
    except KeyError:
        raise ConfigurationError(f"utility block {spec!r} needs 'beta'") from None


# --- aggregate EU agent ---------------------------------------------------------


@dataclass(frozen=True)
class AggregateEU(Utility):
    """Representative EU agent: u_lambda(x) = max sum lambda_i u_i(x_i) s.t. sum x_i = x.

    ``J`` is the common weighted marginal utility lambda_i u_i'(x_i), so that
    u_lambda' = J and each share is I_i(J / lambda_i).  When every agent is
    CARA the fast path uses the harmonic aggregate risk aversion and the
    weighted geometric mean L of the weights: J(x) = L exp(-beta_bar x).
    """

    agents: tuple[Utility, ...]
    lambdas: tuple[float, ...]
    fast: bool = True

    def __post_init__(self):
        if len(self.agents) == 0 or len(self.agents) != len(self.lambdas):
            raise ConfigurationError("need one positive weight per EU agent")
        if any(not (lam > 0.0 and math.isfinite(lam)) for lam in self.lambdas):
            raise ConfigurationError(f"weights must be positive, got {self.lambdas}")

    @property
    def is_cara(self) -> bool:
        return self.fast and all(isinstance(a, CARA) for a in self.agents)

    @property
    def beta_bar(self) -> float:
        if not all(isinstance(a, CARA) for a in self.agents):
            raise UnsupportedFastPath("beta_bar is defined for CARA rosters only")
        return 1.0 / sum(1.0 / a.beta for a in self.agents)

    @property
    def log_L(self) -> float:
        bb = self.beta_bar
        return sum(bb / a.beta * math.log(lam) for a, lam in zip(self.agents, self.lambdas))

    def _I_lambda(self, z):
        # total wealth used when the common marginal level is exp(z)
        y = np.exp(np.asarray(z, dtype=float))
        return sum(a.inv_marginal(y / lam) for a, lam in zip(self.agents, self.lambdas))

    def log_J(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_cara:
            return self.log_L - self.beta_bar * x
        return monotone_inverse(self._I_lambda, x, increasing=False, lo=-5.0, hi=5.0, tol=1e-14)

    def J(self, x):
        return np.exp(self.log_J(x))

    def shares(self, x) -> np.ndarray:
        """Optimal split of aggregate wealth ``x``; shape (n_agents, *x.shape)."""
        x = np.asarray(x, dtype=float)
        if self.is_cara:
            bb, lL = self.beta_bar, self.log_L
            return np.stack([(bb / a.beta) * x + (math.log(lam) - lL) / a.beta for a, lam in zip(self.agents, self.lambdas)])
        y = self.J(x)
        return np.stack([a.inv_marginal(y / lam) for a, lam in zip(self.agents, self.lambdas)])

    def u(self, x):
        if self.is_cara:
            return -self.J(x) / self.beta_bar
        xs = self.shares(x)
        return sum(lam * a.u(xi) for a, lam, xi in zip(self.agents, self.lambdas, xs))

    def du(self, x):
        return self.J(x)

    def d2u(self, x):
        if self.is_cara:
            return -self.beta_bar * self.J(x)
        xs = self.shares(x)
        return 1.0 / sum(1.0 / (lam * a.d2u(xi)) for a, lam, xi in zip(self.agents, self.lambdas, xs))

    def inv_marginal(self, y):
        return self._I_lambda(np.log(np.asarray(y, dtype=float)))

    def share_slopes(self, x) -> np.ndarray:
        """d x_i / d x for the split of aggregate wealth ``x``."""
        x = np.asarray(x, dtype=float)
        if self.is_cara:
            bb = self.beta_bar
            return np.stack([np.full(x.shape, bb / a.beta) for a in self.agents])
        xs = self.shares(x)
        inv = [1.0 / (lam * a.d2u(xi)) for a, lam, xi in zip(self.agents, self.lambdas, xs)]
        tot = sum(inv)
        return np.stack([r / tot for r in inv])


def build_aggregate(eu_agents: Sequence[Utility], lambdas: Sequence[float], *, fast: bool = True) -> AggregateEU:
    return AggregateEU(tuple(eu_agents), tuple(float(v) for v in lambdas), fast)


# --- economy --------------------------------------------------------------------


@dataclass(frozen=True)
class Economy:
    weighting: WeightingFunction
    rdu: Utility
    eu: tuple[Utility, ...]
    lambdas: tuple[float, ...]
    w: float = 0.0
    fast: bool = True

    def __post_init__(self):
        if len(self.eu) < 1:
            raise ConfigurationError("the economy needs at least one EU agent")
        if len(self.lambdas) != len(self.eu):
            raise ConfigurationError("need one weight per EU agent")
        if any(not (lam > 0.0) for lam in self.lambdas):
            raise ConfigurationError(f"weights must be positive, got {self.lambdas}")

    @property
    def n(self) -> int:
        return 1 + len(self.eu)

    @property
    def aggregate(self) -> AggregateEU:
        return build_aggregate(self.eu, self.lambdas, fast=self.fast)

    @property
    def all_cara(self) -> bool:
        return isinstance(self.rdu, CARA) and all(isinstance(a, CARA) for a in self.eu)

    def with_weighting(self, T: WeightingFunction) -> "Economy":
        return Economy(T, self.rdu, self.eu, self.lambdas, self.w, self.fast)

    @classmethod
    def from_dict(cls, cfg: dict[str, Any]) -> "Economy":
        try:
            rdu = cfg["rdu"]
            T = weighting_from_dict(rdu["weighting"])
            u1 = utility_from_dict(rdu)
            eu = tuple(utility_from_dict(a) for a in cfg["eu"])
        except KeyError as exc:
            raise ConfigurationError(f"economy config is missing {exc}") from None
        w = float(cfg.get("w", 0.0))
        lam = cfg.get("lambda", "auto_no_side_payment")
        if lam == "auto_no_side_payment":
            if w != 0.0:
                raise ConfigurationError("auto_no_side_payment requires w = 0")
            lam = no_side_payment_weights([a.beta for a in eu])
        elif not isinstance(lam, (list, tuple)):
            raise ConfigurationError(f"'lambda' must be a list or 'auto_no_side_payment', got {lam!r}")
        return cls(T, u1, eu, tuple(float(v) for v in lam), w)

    def to_dict(self) -> dict[str, Any]:
        rdu = self.rdu.to_dict()
        rdu["weighting"] = self.weighting.to_dict()
        return {"rdu": rdu, "eu": [a.to_dict() for a in self.eu], "lambda": list(self.lambdas), "w": self.w}

    # m(x) = u_lambda'(w - x) / u_1'(x) and its inverse --------------------------

    def log_m(self, x):
        x = np.asarray(x, dtype=float)
        return self.aggregate.log_J(self.w - x) - np.log(self.rdu.du(x))

    def m(self, x):
        return np.exp(self.log_m(x))

    def dlog_m(self, x):
        """d/dx log m(x)."""
        x = np.asarray(x, dtype=float)
        agg = self.aggregate
        z = self.w - x
        return -agg.d2u(z) / agg.du(z) - self.rdu.d2u(x) / self.rdu.du(x)

    def m_inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(~(y > 0.0)) or np.any(~np.isfinite(y)):
            bad = y[~((y > 0.0) & np.isfinite(y))]
            raise NumericDomainError(f"delta' value(s) {bad[:3]} outside the range (0, inf) of m")
        agg = self.aggregate
        if agg.is_cara and isinstance(self.rdu, CARA) and self.fast:
            bb = agg.beta_bar
            return (np.log(y) - agg.log_L + bb * self.w) / (self.rdu.beta + bb)
        return monotone_inverse(self.log_m, np.log(y), increasing=True, bounds=self.rdu.domain, lo=-1.0, hi=1.0)


def no_side_payment_weights(betas: Sequence[float], w: float = 0.0) -> tuple[float, ...]:
    """Welfare weights of the EU agents under which no deterministic side payment is made.

    With CARA agents every side payment is affine in the log-weights.  Setting
    them all to zero gives log(lambda_j) = 0 for every j, and the system is
    only consistent when the aggregate endowment is 0.
    """
    if w != 0.0:
        raise ConfigurationError("side payments cannot all vanish when w != 0 (they sum to w)")
    if any(b <= 0.0 for b in betas):
        raise ConfigurationError(f"betas must be positive, got {betas}")
    lam = tuple(1.0 for _ in betas)
    econ = Economy(Linear(), CARA(1.0), tuple(CARA(b) for b in betas), lam, 0.0)
    sp = cara_side_payments(econ)
    if np.max(np.abs(sp)) > 1e-12:
        raise ArithmeticError(f"side payments {sp} do not vanish")
    return lam


# --- allocations ------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    location: float
    mass: float
    u_interval: tuple[float, float]


@dataclass(frozen=True)
class AgentLaw:
    """Marginal law of one agent: atoms plus a continuous part."""

    index: int
    atoms: tuple[Atom, ...]
    support: tuple[float, float]
    continuous_mass: float

    @property
    def atom(self) -> Atom | None:
        return max(self.atoms, key=lambda a: a.mass) if self.atoms else None


@dataclass(frozen=True)
class AllocationDistribution:
    """Pareto-optimal allocation as deterministic functions of one uniform U."""

    economy: Economy
    envelope: EnvelopeResult
    w: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.w is None:
            object.__setattr__(self, "w", self.economy.w)

    @property
    def n(self) -> int:
        return self.economy.n

    def x1(self, u, s=None):
        u = np.asarray(u, dtype=float)
        s = 1.0 - u if s is None else np.asarray(s, dtype=float)
        return self.economy.m_inverse(self.envelope.deriv_pair(u, s))

    def payoffs(self, u, s=None) -> np.ndarray:
        """Array of shape (n, len(u)); row 0 is the RDU agent."""
        x1 = self.x1(u, s)
        rest = self.economy.aggregate.shares(self.w - x1)
        return np.vstack([x1[None, ...], rest])

    def quantile(self, agent: int, t, s=None):
        """Quantile function of agent ``agent`` at levels ``t`` in (0, 1); ``s`` is 1 - t."""
        t = np.asarray(t, dtype=float)
        s = 1.0 - t if s is None else np.asarray(s, dtype=float)
        if agent == 0:
            return self.x1(t, s)
        # EU payoffs are nonincreasing in U
        return self.payoffs(s, t)[agent]

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(size)
        return self.payoffs(u)

    # marginal laws ----------------------------------------------------------

    def _atoms_u(self) -> list[tuple[float, float]]:
        return [(a, b) for a, b in self.envelope.affine_intervals() if b > a]

    def laws(self) -> list[AgentLaw]:
        out = []
        ivs = self._atoms_u()
        cont = 1.0 - sum(b - a for a, b in ivs)
        eps = 1e-15
        edge = self.payoffs(np.array([eps, 1.0 - eps]), np.array([1.0 - eps, eps]))
        mids = [0.5 * (a + b) for a, b in ivs]
        locs = self.payoffs(np.array(mids), 1.0 - np.array(mids)) if ivs else None
        for i in range(self.n):
            atoms = tuple(Atom(float(locs[i, k]), b - a, (a, b)) for k, (a, b) in enumerate(ivs)) if ivs else ()
            lo, hi = sorted((float(edge[i, 0]), float(edge[i, 1])))
            out.append(AgentLaw(i, atoms, (lo, hi), cont))
        return out

    def continuous_u_range(self) -> list[tuple[float, float]]:
        """U-intervals on which X1 is strictly increasing."""
        pts = [0.0]
        for a, b in self._atoms_u():
            pts += [a, b]
        pts.append(1.0)
        return [(pts[k], pts[k + 1]) for k in range(0, len(pts), 2) if pts[k + 1] > pts[k]]

    def width(self, agent: int) -> float:
        """Width of the range of the continuous part of an agent's payoff."""
        total = 0.0
        for a, b in self.continuous_u_range():
            vals = [self._edge_payoff(v)[agent] for v in (a, b)]
            total += abs(vals[1] - vals[0])
        return total

    def _edge_payoff(self, u: float) -> np.ndarray:
        # payoffs at u, using the one-sided limit of delta' at 0 and 1
        if 0.0 < u < 1.0:
            return self.payoffs(np.array([u]), np.array([1.0 - u]))[:, 0]
        T = self.envelope.weighting
        d = (T.endpoint_slope(1) if u == 0.0 else T.endpoint_slope(0)) if self.envelope.representation in (
            Representation.ANALYTIC_INVERSE_S, Representation.ANALYTIC_S, Representation.COINCIDES) else float(
            self.envelope.deriv(min(max(u, 1e-300), 1.0 - 1e-16)))
        if not (0.0 < d < math.inf):
            x1 = -math.inf if d <= 0.0 else math.inf
            slopes = self.economy.aggregate.share_slopes(np.array(0.0))
            return np.array([x1, *(-np.sign(slopes) * x1)])
        x1 = float(self.economy.m_inverse(np.array(d)))
        return np.array([x1, *self.economy.aggregate.shares(np.array(self.w - x1))])

    # density of the continuous part -------------------------------------------

    def density_table(self, u) -> np.ndarray:
        """Rows (u, x_1..x_n, f_1..f_n) along U values in the contact set.

        The RDU agent's density is m'(x)/T~''(u) at x = X1(u); EU agents follow
        from the monotone transform x -> share_i(w - x).
        """
        if self.envelope.representation not in (
            Representation.ANALYTIC_INVERSE_S,
            Representation.ANALYTIC_S,
            Representation.COINCIDES,
        ):
            raise UnsupportedFastPath("analytic densities need a smooth contact set")
        u = np.asarray(u, dtype=float)
        s = 1.0 - u
        econ = self.economy
        T = self.envelope.weighting
        xs = self.payoffs(u, s)
        x1 = xs[0]
        dm = econ.m(x1) * econ.dlog_m(x1)
        with np.errstate(all="ignore"):
            tt2 = -T.d2(s, u)
        f1 = dm / tt2
        slopes = econ.aggregate.share_slopes(self.w - x1)  # d x_i / d(w - x1)
        dens = [f1] + [f1 / np.abs(sl) for sl in slopes]
        return np.column_stack([u, *xs, *dens])

    def u_of_x1(self, x):
        """Inverse of U -> X1 on the contact set (the CDF of X1 there)."""
        x = np.asarray(x, dtype=float)
        E = self.envelope
        T = E.weighting
        target = np.log(self.economy.m(x))
        if E.representation is Representation.ANALYTIC_INVERSE_S:
            lo, hi = E.pstar, 1.0
        elif E.representation is Representation.ANALYTIC_S:
            lo, hi = 0.0, E.pstar
        else:
            lo, hi = 0.0, 1.0

        # work in z = logit(u) so that both u and 1 - u stay accurate
        zlo = -700.0 if lo == 0.0 else math.log(lo / (1.0 - lo))
        zhi = 700.0 if hi == 1.0 else math.log(hi / (1.0 - hi))

        def logd(z):
            with np.errstate(all="ignore"):
                return np.log(T.d1(expit(-z), expit(z)))

        ends = logd(np.array([zlo, zhi]))
        target = np.clip(target, ends[0], ends[1])
        z = monotone_inverse(logd, target, increasing=True, lo=zlo, hi=zhi, bounds=(zlo, zhi), tol=1e-15)
        return expit(z)

    def cdf(self, agent: int, x):
        """CDF of an agent's payoff on the continuous part of its support."""
        x = np.asarray(x, dtype=float)
        if agent == 0:
            return self.u_of_x1(x)
        # invert the decreasing share map by bisection on x1
        share = lambda x1: self.economy.aggregate.shares(self.w - x1)[agent - 1]
        x1 = monotone_inverse(share, x, increasing=False)
        return 1.0 - self.u_of_x1(x1)

    def density(self, agent: int, x):
        """Density of the continuous part at payoff level ``x``."""
        x = np.asarray(x, dtype=float)
        if agent == 0:
            u = self.u_of_x1(x)
        else:
            share = lambda x1: self.economy.aggregate.shares(self.w - x1)[agent - 1]
            u = self.u_of_x1(monotone_inverse(share, x, increasing=False))
        return self.density_table(np.atleast_1d(u))[:, 1 + self.n + agent].reshape(x.shape)

    def feasibility_error(self, grid: int = 2001) -> float:
        t = (np.arange(grid) + 0.5) / grid
        return float(np.max(np.abs(self.payoffs(t).sum(axis=0) - self.w)))


def solve_allocation(econ: Economy, envelope: EnvelopeResult | None = None) -> AllocationDistribution:
    """Welfare-maximising allocation for the weights in ``econ``."""
    if envelope is None:
        envelope = build_envelope(econ.weighting)
    return AllocationDistribution(econ, envelope)


def allocation_density(econ: Economy, envelope: EnvelopeResult | None = None, *, grid: int = 2001, seed: int = 42,
                       draws: int = 1_000_000, bins: int = 200) -> dict[str, Any]:
    """Atoms and density tables of every agent's payoff.

    Smooth envelopes get the analytic density on a midpoint grid of the
    contact set; piecewise-linear hulls fall back to Monte Carlo histograms.
    """
    alloc = solve_allocation(econ, envelope)
    laws = alloc.laws()
    E = alloc.envelope
    out: dict[str, Any] = {"laws": laws, "method": "analytic"}
    rngs = alloc.continuous_u_range()
    if E.representation in (Representation.ANALYTIC_INVERSE_S, Representation.ANALYTIC_S, Representation.COINCIDES):
        a, b = rngs[0]
        u = a + (b - a) * (np.arange(grid) + 0.5) / grid
        out["table"] = alloc.density_table(u)
        return out
    out["method"] = "monte_carlo"
    rng = np.random.default_rng(seed)
    xs = alloc.sample(draws, rng)
    hists = []
    for i in range(alloc.n):
        atoms = np.zeros(draws, dtype=bool)
        for at in laws[i].atoms:
            atoms |= np.abs(xs[i] - at.location) < 1e-12 * max(1.0, abs(at.location))
        cont = xs[i][~atoms]
        if cont.size:
            dens, edges = np.histogram(cont, bins=bins)
            dens = dens / (draws * np.diff(edges))
            hists.append((0.5 * (edges[1:] + edges[:-1]), dens))
        else:
            hists.append((np.array([]), np.array([])))
    out["histograms"] = hists
    return out


# --- CARA closed forms -------------------------------------------------------------


@dataclass(frozen=True)
class CaraClosedForm:
    """X1 = X1_rand(U) + X1_side and X_j = X_j_rand(U) + X_j_side."""

    economy: Economy
    envelope: EnvelopeResult
    side: np.ndarray  # deterministic parts, RDU agent first
    coef: np.ndarray  # multipliers of ln delta'(U)

    def random_parts(self, u, s=None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        s = 1.0 - u if s is None else s
        I = np.log(self.envelope.deriv_pair(u, s))
        return self.coef[:, None] * np.atleast_1d(I)[None, :]

    def payoffs(self, u, s=None) -> np.ndarray:
        return self.random_parts(u, s) + self.side[:, None]


def cara_side_payments(econ: Economy) -> np.ndarray:
    if not econ.all_cara:
        raise UnsupportedFastPath("closed form needs CARA utilities for every agent")
    agg = econ.aggregate
    b1, bb, lL = econ.rdu.beta, agg.beta_bar, agg.log_L
    x1 = (bb * econ.w - lL) / (b1 + bb)
    rest = [(bb / a.beta) * (econ.w - x1) + (math.log(lam) - lL) / a.beta for a, lam in zip(econ.eu, econ.lambdas)]
    return np.array([x1, *rest])


def cara_closed_form(econ: Economy, envelope: EnvelopeResult | None = None) -> CaraClosedForm:
    """Closed-form split of every CARA payoff into a random part and a side payment."""
    side = cara_side_payments(econ)
    agg = econ.aggregate
    b1, bb = econ.rdu.beta, agg.beta_bar
    coef = np.array([1.0 / (b1 + bb), *[-(bb / a.beta) / (b1 + bb) for a in econ.eu]])
    if envelope is None:
        envelope = build_envelope(econ.weighting)
    return CaraClosedForm(econ, envelope, side, coef)


def borch_check(payoffs: np.ndarray | AllocationDistribution, econ: Economy, grid: int = 1001) -> float:
    """Largest relative spread of lambda_i u_i'(X_i) across EU agents, over states."""
    if isinstance(payoffs, AllocationDistribution):
        t = (np.arange(grid) + 0.5) / grid
        payoffs = payoffs.payoffs(t)
    eu = np.asarray(payoffs, dtype=float)[1:]
    mu = np.stack([lam * a.du(x) for a, lam, x in zip(econ.eu, econ.lambdas, eu)])
    scale = np.max(np.abs(mu), axis=0)
    return float(np.max((mu.max(axis=0) - mu.min(axis=0)) / scale))
