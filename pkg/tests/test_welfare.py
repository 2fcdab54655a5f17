import math

import numpy as np
import pytest
from scipy import stats

from rdushare.distortion import Prelec
from rdushare.economy import CARA, solve_allocation
from rdushare.welfare import (
    ce_discrete,
    ce_eu,
    ce_quantile,
    ce_rdu,
    ce_sweep,
    kaldor_hicks,
    welfare_report,
)

from conftest import cara_economy


def test_constant_payoff_has_its_own_ce():
    for c in (-1.3, 0.0, 2.5):
        assert ce_quantile(lambda u, s: np.full_like(u, c), CARA(0.7), Prelec(0.5)) == pytest.approx(c, abs=1e-10)
        assert ce_discrete([c], [1.0], CARA(2.0)) == pytest.approx(c, abs=1e-14)


def test_cash_additivity():
    # Gaussian quantile; a logistic tail would have infinite disutility under Prelec(0.5)
    q = lambda u, s: np.where(u < 0.5, stats.norm.ppf(u), stats.norm.isf(s))
    for T in (None, Prelec(0.5), Prelec(2.0)):
        base = ce_quantile(q, CARA(0.5), T)
        shifted = ce_quantile(lambda u, s: q(u, s) + 0.7, CARA(0.5), T)
        assert shifted - base == pytest.approx(0.7, abs=1e-10)


def test_two_point_lottery():
    # CARA(1) on +-1 with equal odds: CE = -ln cosh 1
    ce = ce_discrete([-1.0, 1.0], [0.5, 0.5], CARA(1.0))
    assert ce == pytest.approx(-math.log(math.cosh(1.0)), abs=1e-14)
    assert ce == pytest.approx(-0.4338, abs=1e-4)
    step = lambda u, s: np.where(u < 0.5, -1.0, 1.0)
    assert ce_quantile(step, CARA(1.0), breaks=[0.5]) == pytest.approx(ce, abs=1e-12)


def test_kaldor_hicks_equalises():
    ce = np.array([0.3, -0.1, 0.5])
    t = kaldor_hicks(ce)
    assert t.sum() == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(ce - t, ce.sum() / 3, atol=1e-15)


def test_report_transfers(baseline):
    rep = welfare_report(solve_allocation(baseline))
    assert rep.side_payments.sum() == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(rep.post_transfer_ce, rep.ce_sum / 3, atol=1e-14)
    assert rep.abs_error < 1e-8


def test_quadrature_converges(baseline):
    alloc = solve_allocation(baseline)
    coarse = ce_rdu(alloc, tol=1e-6)
    fine = ce_rdu(alloc, tol=1e-13)
    assert abs(coarse - fine) < 1e-6
    assert ce_eu(alloc, 1, tol=1e-9) == pytest.approx(ce_eu(alloc, 1, tol=1e-13), abs=1e-9)


def test_ce_matches_quantile_route(baseline):
    alloc = solve_allocation(baseline)
    p = alloc.envelope.pstar
    q1 = lambda u, s: alloc.quantile(0, u, s)
    assert ce_rdu(alloc) == pytest.approx(ce_quantile(q1, CARA(0.5), Prelec(0.8), breaks=[p]), abs=1e-9)
    q2 = lambda u, s: alloc.quantile(1, u, s)
    assert ce_eu(alloc, 1) == pytest.approx(ce_quantile(q2, CARA(0.5), breaks=[1.0 - p]), abs=1e-9)


def test_sweep_zero_at_expected_utility():
    rows = ce_sweep(cara_economy(Prelec(1.0)), [0.4, 1.0, 2.0])
    assert rows.shape == (3, 5)
    assert np.max(np.abs(rows[1, 1:])) < 1e-9
    assert rows[0, -1] > 0.0 and rows[2, -1] > 0.0


def test_sweep_grows_with_distance_from_unit_alpha():
    low = ce_sweep(cara_economy(Prelec(1.0)), [0.2, 0.4, 0.6, 0.8, 0.95])[:, -1]
    high = ce_sweep(cara_economy(Prelec(1.0)), [1.05, 1.5, 2.0, 3.0])[:, -1]
    assert np.all(np.diff(low) < 0.0)
    assert np.all(np.diff(high) > 0.0)


def test_sweep_frozen_row():
    row = ce_sweep(cara_economy(Prelec(1.0)), [0.2])[0]
    assert row[1] == pytest.approx(row[2], abs=1e-9)
    assert row[1:] == pytest.approx([0.2334, 0.2334, 0.0584, 0.5252], abs=1e-4)


def test_full_insurance_sum_is_endowment():
    econ = cara_economy(Prelec(1.0), lambdas=(0.7, 1.3), w=0.8)
    rep = welfare_report(solve_allocation(econ))
    assert rep.ce_sum == pytest.approx(0.8, abs=1e-12)


def test_eu_agent_numbering(baseline):
    with pytest.raises(ValueError):
        ce_eu(solve_allocation(baseline), 0)
