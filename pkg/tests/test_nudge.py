import numpy as np
import pytest

from rdushare.distortion import Linear, Mixture, Prelec
from rdushare.economy import CARA, generic_cara, solve_allocation
from rdushare.envelope import Representation, build_envelope, nudged_envelope
from rdushare.nudge import (
    NudgeConfig,
    allocation_at_effort,
    foc_residual,
    nudged_weighting,
    optimal_effort,
    sensitivity,
    value,
)
from rdushare.oracle import discrete_rdu

from conftest import cara_economy

T_GRID = (np.arange(1001) + 0.5) / 1001


def cfg_for(alpha, b1=0.5, b2=0.4, **kw):
    return NudgeConfig(Prelec(alpha), CARA(b1), CARA(b2), **kw)


def test_cost_curve():
    cfg = cfg_for(0.4)
    M = np.linspace(0.0, 1.0, 101)
    f = cfg.f(M)
    assert f[0] == 0.0 and f[-1] == 1.0
    # f saturates in double precision well before M = w
    assert np.all(np.diff(f[:60]) > 0.0) and np.all(np.diff(f) >= 0.0)
    assert np.all(np.diff(f[:60], 2) < 0.0)
    assert cfg.df(0.0) == pytest.approx(20.0)
    h = 1e-7
    assert cfg.df(0.3) == pytest.approx((cfg.f(0.3 + h) - cfg.f(0.3 - h)) / (2 * h), rel=1e-7)
    with pytest.raises(ValueError):
        cfg_for(0.4, k=1.0)


def test_nudged_weighting_endpoints():
    T = Prelec(0.4)
    p = np.linspace(0.0, 1.0, 101)
    assert np.array_equal(nudged_weighting(T, 0.0)(p), T(p))
    assert np.allclose(nudged_weighting(T, 1.0)(p), p, atol=1e-15)


def test_nudged_rdu_is_mixture_of_rdu_and_eu():
    rng = np.random.default_rng(42)
    T = Prelec(0.4)
    u = CARA(0.5)
    for _ in range(20):
        x = rng.normal(size=6)
        f = rng.random()
        mixed = discrete_rdu(x, u, nudged_weighting(T, f))
        parts = (1.0 - f) * discrete_rdu(x, u, T) + f * discrete_rdu(x, u, Linear())
        assert mixed == pytest.approx(parts, abs=1e-10)


@pytest.mark.parametrize("alpha", [0.3, 0.8, 2.0])
@pytest.mark.parametrize("f", [0.0, 0.3, 0.9, 1.0])
def test_nudged_envelope_commutes_with_mixing(alpha, f):
    t = np.linspace(0.0, 1.0, 2001)
    E = nudged_envelope(build_envelope(Prelec(alpha)), f)
    F = build_envelope(Mixture(Prelec(alpha), f))
    assert np.max(np.abs(E(t) - F(t))) < 1e-8
    if f < 1.0:
        assert E.pstar == pytest.approx(F.pstar, abs=1e-8)
    else:
        assert E.representation is Representation.IDENTITY


def test_insured_mass_nondecreasing_in_effort():
    cfg = cfg_for(0.4)
    fi = [allocation_at_effort(cfg, M).envelope.fi_mass for M in np.linspace(0.0, 1.0, 11)]
    assert np.all(np.diff(fi) >= 0.0)
    assert fi[-1] == 1.0


def test_zero_effort_matches_plain_economy():
    cfg = cfg_for(0.4, w=1.0)
    econ = cara_economy(Prelec(0.4), (0.5, 0.4), w=1.0)
    a = allocation_at_effort(cfg, 0.0).payoffs(T_GRID)
    b = solve_allocation(econ).payoffs(T_GRID)
    assert np.max(np.abs(a - b)) < 1e-14
    assert NudgeConfig.from_economy(econ).u2 == CARA(0.4)


def test_generic_utilities_match_fast():
    fast = cfg_for(0.4)
    slow = NudgeConfig(Prelec(0.4), generic_cara(0.5), generic_cara(0.4))
    for M in (0.0, 0.1, 0.5):
        a = allocation_at_effort(fast, M).payoffs(T_GRID)
        b = allocation_at_effort(slow, M).payoffs(T_GRID)
        assert np.max(np.abs(a - b)) < 1e-9


@pytest.mark.parametrize("M", [0.0, 0.05, 0.3])
def test_sensitivity_matches_finite_difference(M):
    cfg = cfg_for(0.4)
    t = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    x = lambda m: allocation_at_effort(cfg, m).x1(t)
    if M == 0.0:
        fd = (-3.0 * x(0.0) + 4.0 * x(h) - x(2 * h)) / (2 * h)
    else:
        fd = (x(M + h) - x(M - h)) / (2 * h)
    assert np.max(np.abs(sensitivity(cfg, M, t) - fd)) < 1e-5


def test_sensitivity_cara_identity_weighting():
    # with delta' = 1 the nudge has no bite and x' = -beta2 / (beta1 + beta2)
    cfg = NudgeConfig(Linear(), CARA(0.6), CARA(0.4))
    assert np.allclose(sensitivity(cfg, 0.2, T_GRID), -0.4, atol=1e-13)


@pytest.mark.parametrize("alpha, M", [(0.4, 0.02), (0.4, 0.2), (0.2, 0.1), (2.0, 0.1)])
def test_foc_matches_finite_difference_of_value(alpha, M):
    cfg = cfg_for(alpha)
    h = 1e-5
    fd = (value(cfg, M + h) - value(cfg, M - h)) / (2 * h)
    assert foc_residual(cfg, M) == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("alpha", [0.2, 0.4, 0.9])
def test_nudging_does_not_pay_at_the_margin(alpha):
    assert foc_residual(cfg_for(alpha), 0.0) < 0.0


def test_full_nudge_value_is_full_insurance():
    # f = 1 and nothing left to share: x = 0 and V = -1/beta1 - 1/beta2
    cfg = cfg_for(0.4)
    assert value(cfg, 1.0) == pytest.approx(-1.0 / 0.5 - 1.0 / 0.4, abs=1e-12)


def test_optimal_effort_boundary():
    sol = optimal_effort(cfg_for(0.9))
    assert sol.M_star == 0.0 and sol.boundary
    assert sol.foc_residual < 0.0
    assert sol.V_star == pytest.approx(sol.values.max(), abs=1e-15)
    assert not sol.multimodal
