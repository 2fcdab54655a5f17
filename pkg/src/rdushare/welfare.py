"""Certainty equivalents and Kaldor-Hicks accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distortion import Prelec
from .economy import AllocationDistribution, Economy, Utility, solve_allocation
from .envelope import Representation
from .quadrature import QuadResult, QuadratureError, integrate_unit

CE_TOL = 1e-8


def _atom_terms(alloc: AllocationDistribution, agent: int, weight_fn) -> float:
    total = 0.0
    for a, b in alloc._atoms_u():
        mid = 0.5 * (a + b)
        x = alloc.payoffs(np.array([mid]), np.array([1.0 - mid]))[agent, 0]
        total += weight_fn(a, b) * float(_utility(alloc, agent).u(x))
    return total


def _density_weight(T):
    # dT~(u)/du = T'(1 - u), evaluated from the (1 - u, u) pair
    def w(u, s):
        with np.errstate(all="ignore"):
            return T.d1(s, u)

    return w


def _utility(alloc: AllocationDistribution, agent: int) -> Utility:
    econ = alloc.economy
    return econ.rdu if agent == 0 else econ.eu[agent - 1]


def _expected_utility(alloc: AllocationDistribution, agent: int, distorted: bool, tol: float) -> QuadResult:
    """Choquet (``distorted``) or plain expectation of u_agent(X_agent) over U."""
    E = alloc.envelope
    T = E.weighting
    util = _utility(alloc, agent)

    if distorted:
        tt = lambda u: 0.0 if u <= 0.0 else 1.0 if u >= 1.0 else float(T.cvalue(np.array(1.0 - u), np.array(u)))
        weight = lambda a, b: tt(b) - tt(a)
    else:
        weight = lambda a, b: b - a

    if E.representation is Representation.HULL:
        # X1 is constant between consecutive knots, so the sum is exact
        kt = E.knots[:, 0]
        mid = 0.5 * (kt[1:] + kt[:-1])
        x = alloc.payoffs(mid)[agent]
        if distorted:
            w = np.diff(np.array([tt(k) for k in kt]))
        else:
            w = np.diff(kt)
        return QuadResult(float(np.sum(w * util.u(x))), 0.0, kt.size)

    total = QuadResult(_atom_terms(alloc, agent, weight), 0.0, 0)

    g = lambda u, s: util.u(alloc.payoffs(u, s)[agent])
    dens = _density_weight(T) if distorted else None
    for a, b in alloc.continuous_u_range():
        total = total + integrate_unit(g, a, b, tol=tol, weight=dens)
    return total


@dataclass(frozen=True)
class WelfareReport:
    ce: np.ndarray
    ce_sum: float
    abs_error: float
    nodes: int
    side_payments: np.ndarray | None = None

    @property
    def post_transfer_ce(self) -> np.ndarray | None:
        if self.side_payments is None:
            return None
        return self.ce - self.side_payments


def _ce(alloc: AllocationDistribution, agent: int, distorted: bool, tol: float) -> tuple[float, QuadResult]:
    util = _utility(alloc, agent)
    res = _expected_utility(alloc, agent, distorted, tol)
    if res.error > CE_TOL:
        raise QuadratureError(f"agent {agent}: quadrature error {res.error:.3g} above {CE_TOL}", res)
    return float(util.inverse(res.value)), res


def ce_rdu(alloc: AllocationDistribution, *, tol: float = 1e-12) -> float:
    """Certainty equivalent of the RDU agent's payoff."""
    return _ce(alloc, 0, True, tol)[0]


def ce_eu(alloc: AllocationDistribution, agent: int, *, tol: float = 1e-12) -> float:
    """Certainty equivalent of EU agent ``agent`` (1-based, 0 is the RDU agent)."""
    if agent < 1:
        raise ValueError("EU agents are numbered from 1")
    return _ce(alloc, agent, False, tol)[0]


def ce_discrete(values: Sequence[float], probs: Sequence[float], util: Utility) -> float:
    """CE of a finite lottery for an EU agent."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    return float(util.inverse(np.sum(p * util.u(v))))


def ce_quantile(q, util: Utility, T=None, *, tol: float = 1e-12, breaks: Sequence[float] = ()) -> float:
    """CE of a payoff given by its quantile function ``q(u, s)`` on (0, 1).

    ``q`` also receives ``s = 1 - u`` computed without cancellation, so that
    unbounded quantiles stay finite next to 1.  With a weighting ``T`` this is
    the RDU certainty equivalent; ``breaks`` lists points where ``q`` jumps so
    that quadrature panels end there.
    """

    g = lambda u, s: util.u(q(u, s))
    dens = _density_weight(T) if T is not None else None
    cuts = sorted({0.0, 1.0, *breaks})
    res = QuadResult(0.0, 0.0, 0)
    for a, b in zip(cuts[:-1], cuts[1:]):
        res = res + integrate_unit(g, a, b, tol=tol, weight=dens)
    return float(util.inverse(res.value))


def kaldor_hicks(ce: np.ndarray) -> np.ndarray:
    """Transfers t_i that leave every agent with CE_i - t_i = sum(CE) / n."""
    ce = np.asarray(ce, dtype=float)
    t = ce - ce.sum() / ce.size
    return t - t.mean()


def welfare_report(alloc: AllocationDistribution, *, tol: float = 1e-12) -> WelfareReport:
    ces, err, nodes = [], 0.0, 0
    for i in range(alloc.n):
        ce, res = _ce(alloc, i, i == 0, tol)
        ces.append(ce)
        err += res.error
        nodes += res.nodes
    ce_arr = np.array(ces)
    return WelfareReport(ce_arr, float(ce_arr.sum()), err, nodes, kaldor_hicks(ce_arr))


def ce_sweep(template: Economy, alphas: Sequence[float], *, tol: float = 1e-12) -> np.ndarray:
    """Rows (alpha, CE_1..CE_n, CE_sum) for Prelec weightings over ``alphas``."""
    rows = []
    for a in alphas:
        rep = welfare_report(solve_allocation(template.with_weighting(Prelec(float(a)))), tol=tol)
        rows.append([float(a), *rep.ce, rep.ce_sum])
    return np.array(rows)
