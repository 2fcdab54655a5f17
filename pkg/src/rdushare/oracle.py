"""Brute-force checks on economies with finitely many equiprobable states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .distortion import WeightingFunction, conjugate
from .economy import Economy, Utility
from .envelope import hull_envelope


def _tt_grid(T: WeightingFunction, m: int) -> np.ndarray:
    Tt = conjugate(T)
    return np.asarray(Tt(np.arange(m + 1) / m), dtype=float)


def discrete_rdu(outcomes, u: Utility, T: WeightingFunction) -> float:
    """Choquet integral of u over m equiprobable outcomes."""
    x = np.sort(np.asarray(outcomes, dtype=float))
    w = np.diff(_tt_grid(T, x.size))
    return float(np.sum(u.u(x) * w))


def comonotone_check(matrix, tol: float = 1e-12) -> bool:
    """True when every pair of rows moves weakly together across all state pairs."""
    X = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = X[:, :, None] - X[:, None, :]
    for i in range(X.shape[0]):
        for j in range(i + 1, X.shape[0]):
            if np.any(d[i] * d[j] < -tol):
                return False
    return True


@dataclass(frozen=True)
class DiscreteEconomy:
    economy: Economy
    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least two states")

    @property
    def weights(self) -> np.ndarray:
        return np.diff(_tt_grid(self.economy.weighting, self.m))

    def welfare(self, alloc) -> np.ndarray:
        """Objective for allocations of shape (..., n, m)."""
        X = np.asarray(alloc, dtype=float)
        econ = self.economy
        x1 = np.sort(X[..., 0, :], axis=-1)
        val = np.sum(econ.rdu.u(x1) * self.weights, axis=-1)
        for i, (a, lam) in enumerate(zip(econ.eu, econ.lambdas), start=1):
            val = val + lam * np.mean(a.u(X[..., i, :]), axis=-1)
        return val

    def complete(self, free) -> np.ndarray:
        """Append the last agent's row so that every column sums to w."""
        F = np.asarray(free, dtype=float)
        last = self.economy.w - F.sum(axis=-2, keepdims=True)
        return np.concatenate([F, last], axis=-2)

    def feasibility_error(self, alloc) -> float:
        return float(np.max(np.abs(np.asarray(alloc).sum(axis=0) - self.economy.w)))


def discretized_allocation(decon: DiscreteEconomy) -> np.ndarray:
    """Closed-form optimum on m states, RDU payoff increasing in the state index.

    The envelope of T~ sampled at k/m replaces delta; its cell slopes play the
    role of delta' on each state.
    """
    econ = decon.economy
    t = np.arange(decon.m + 1) / decon.m
    y = _tt_grid(econ.weighting, decon.m)
    idx = hull_envelope(t, y)
    delta = np.interp(t, t[idx], y[idx])
    slopes = np.diff(delta) * decon.m
    x1 = econ.m_inverse(slopes)
    rest = econ.aggregate.shares(econ.w - x1)
    return np.vstack([x1[None, :], rest])


def midpoint_allocation(econ: Economy, m: int, envelope=None) -> np.ndarray:
    """The continuous solution sampled at t_k = (k - 1/2)/m."""
    from .economy import solve_allocation

    t = (np.arange(m) + 0.5) / m
    return solve_allocation(econ, envelope).payoffs(t)


@dataclass(frozen=True)
class OracleResult:
    allocation: np.ndarray
    welfare: float
    evaluations: int


def brute_force_welfare(
    decon: DiscreteEconomy,
    *,
    levels: int = 41,
    span: float = 2.0,
    starts: int = 6,
    seed: int = 0,
    polish: bool = True,
) -> OracleResult:
    """Multi-start coordinate search on a wealth grid, then Powell polish.

    The grid covers w/n +- ``span``.  Each coordinate move scans every level
    for one free entry at once.  The result is a lower bound on the optimum.
    """
    econ = decon.economy
    n, m = econ.n, decon.m
    rng = np.random.default_rng(seed)
    grid = econ.w / n + np.linspace(-span, span, levels)
    inits = [np.full((n - 1, m), econ.w / n)]
    inits += [rng.choice(grid, size=(n - 1, m)) for _ in range(starts - 1)]
    evals = 0
    best_F, best_v = None, -np.inf
    for F in inits:
        F = F.copy()
        cur = float(decon.welfare(decon.complete(F)))
        evals += 1
        for _ in range(50):
            improved = False
            for i in range(n - 1):
                for k in range(m):
                    cand = np.repeat(F[None], levels, axis=0)
                    cand[:, i, k] = grid
                    vals = decon.welfare(decon.complete(cand))
                    evals += levels
                    j = int(np.argmax(vals))
                    if vals[j] > cur + 1e-15:
                        F, cur, improved = cand[j], float(vals[j]), True
            if not improved:
                break
        if cur > best_v:
            best_F, best_v = F, cur
    if polish:
        obj = lambda z: -float(decon.welfare(decon.complete(z.reshape(n - 1, m))))
        res = optimize.minimize(obj, best_F.ravel(), method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxfev": 200_000})
        evals += int(res.nfev)
        if -res.fun > best_v:
            best_F, best_v = res.x.reshape(n - 1, m), float(-res.fun)
    return OracleResult(decon.complete(best_F), best_v, evals)
