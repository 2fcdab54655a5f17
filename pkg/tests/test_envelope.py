import math

import numpy as np
import pytest
from scipy import optimize

from rdushare.distortion import Hurwicz, Linear, Mixture, Prelec, Rescaled, TverskyKahneman, conjugate
from rdushare.envelope import (
    Representation,
    build_envelope,
    hull_envelope,
    tangent_point_inverse_s,
    tangent_point_s,
)

GRID = np.linspace(0.0, 1.0, 10001)


def prelec_s_closed_form(a):
    return 1.0 - math.exp(-(a ** (-1.0 / (a - 1.0))))


def prelec_inverse_s_oracle(a):
    """p* = 1 - exp(-x) with x the fixed point of the tangency equation in x = -ln(1 - p)."""
    rhs = lambda x: math.log(a * x ** (a - 1.0) * math.exp(x) * (1.0 - math.exp(-x)) + 1.0) ** (1.0 / a)
    x = optimize.brentq(lambda x: x - rhs(x), 1.0, 50.0, xtol=1e-15)
    return 1.0 - math.exp(-x), x, rhs


@pytest.mark.parametrize("a", [1.1, 1.2, 1.5, 2.0, 3.0, 5.0])
def test_s_tangent_matches_closed_form(a):
    assert abs(tangent_point_s(Prelec(a)) - prelec_s_closed_form(a)) < 1e-10


def test_s_tangent_frozen_values():
    assert tangent_point_s(Prelec(2.0)) == pytest.approx(1.0 - math.exp(-0.5), abs=1e-12)
    assert tangent_point_s(Prelec(2.0)) == pytest.approx(0.393469340287, abs=1e-11)
    # 1 - exp(-1.2^-5) = 0.3309373...; quoted elsewhere rounded to 0.33094
    assert tangent_point_s(Prelec(1.2)) == pytest.approx(0.33094, abs=1e-5)
    assert tangent_point_s(Prelec(1.2)) == pytest.approx(0.330937347332, abs=1e-11)


def test_s_tangent_decreases_toward_unit_alpha():
    vals = [tangent_point_s(Prelec(a)) for a in (1.2, 1.01, 1.001)]
    assert vals[0] > vals[1] > vals[2]
    # limit of the closed form as alpha -> 1+
    assert vals[2] == pytest.approx(1.0 - math.exp(-math.exp(-1.0)), abs=1e-3)


@pytest.mark.parametrize("a", [0.2, 0.4, 0.5, 0.8])
def test_inverse_s_tangent_matches_fixed_point(a):
    p = tangent_point_inverse_s(Prelec(a))
    p_oracle, _, rhs = prelec_inverse_s_oracle(a)
    assert abs(p - p_oracle) < 1e-8
    x = -math.log1p(-p)
    assert abs(x - rhs(x)) < 1e-10


def test_inverse_s_tangent_residual():
    for T in (Prelec(0.2), Prelec(0.8), Hurwicz(0.5, 0.5), TverskyKahneman(0.5)):
        p = tangent_point_inverse_s(T)
        tt = conjugate(T)
        assert abs(tt.deriv(p) * p - tt(p)) < 1e-12


def test_frozen_tangent_points():
    assert tangent_point_inverse_s(Prelec(0.8)) == pytest.approx(0.9, abs=0.02)
    assert tangent_point_inverse_s(Prelec(0.8)) == pytest.approx(0.8946578992, abs=1e-9)
    assert tangent_point_inverse_s(Hurwicz(0.5, 0.5)) == pytest.approx(0.768, abs=0.002)
    # HEU(1/2, 1/2) has the closed form p* = 5/2 - sqrt(3)
    assert tangent_point_inverse_s(Hurwicz(0.5, 0.5)) == pytest.approx(2.5 - math.sqrt(3.0), abs=1e-12)


def test_linear_envelope_is_identity():
    E = build_envelope(Linear())
    assert E.representation is Representation.IDENTITY
    assert E.fi_mass == 1.0
    assert np.allclose(E(GRID), GRID)
    assert np.all(E.deriv(GRID[1:-1]) == 1.0)


def test_concave_envelope_coincides():
    T2 = Rescaled(Prelec(0.5), 0.25)
    E = build_envelope(T2)
    assert E.representation is Representation.COINCIDES
    assert E.fi_mass == 0.0
    assert np.max(np.abs(E(GRID) - conjugate(T2)(GRID))) < 1e-15


def test_convex_envelope_is_identity():
    T1 = conjugate(Rescaled(conjugate(Prelec(0.5)), 0.25))
    E = build_envelope(T1)
    assert E.representation is Representation.IDENTITY and E.fi_mass == 1.0


def test_inverse_s_branch_shape():
    E = build_envelope(Prelec(0.8))
    tt = conjugate(Prelec(0.8))
    assert E.fi_mass == E.pstar
    lo = GRID[GRID <= E.pstar]
    hi = GRID[GRID > E.pstar]
    assert np.allclose(E(lo), tt(E.pstar) / E.pstar * lo, atol=1e-15)
    assert np.allclose(E(hi), tt(hi), atol=1e-15)


@pytest.mark.parametrize("a", [0.4, 0.8, 1.2, 2.0])
def test_analytic_agrees_with_hull(a):
    E = build_envelope(Prelec(a))
    H = build_envelope(Prelec(a), force_hull=True)
    assert H.representation is Representation.HULL
    assert np.max(np.abs(E(GRID) - H(GRID))) < 1e-4
    assert abs(E.fi_mass - H.fi_mass) < 1e-3


@pytest.mark.parametrize("T", [Prelec(0.2), Prelec(0.8), Prelec(2.0), Hurwicz(0.5, 0.5), TverskyKahneman(0.6)], ids=repr)
def test_envelope_invariants(T):
    E = build_envelope(T)
    tt = conjugate(T)
    d = E(GRID)
    assert d[0] == pytest.approx(0.0, abs=1e-15) and d[-1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(d <= tt(GRID) + 1e-10)
    assert np.all(d <= GRID + 1e-12)
    slopes = np.diff(d) / np.diff(GRID)
    assert np.all(np.diff(slopes) > -1e-9)
    # smooth fit at the tangent point
    assert abs(E.slope - tt.deriv(E.pstar)) < 1e-9


def test_deriv_left_continuous_and_values():
    E = build_envelope(Hurwicz(0.5, 0.5))
    p = E.pstar
    assert E.deriv(p) == E.slope
    assert E.deriv(p + 1e-12) == pytest.approx(conjugate(Hurwicz(0.5, 0.5)).deriv(p), abs=1e-9)
    # the slope at the tangent point is (2 + sqrt 3)/4 = 0.933..., not 0.95
    assert E.deriv(p + 1e-12) == pytest.approx((2.0 + math.sqrt(3.0)) / 4.0, abs=1e-9)
    S = build_envelope(Prelec(2.0))
    assert S.deriv(S.pstar) == pytest.approx(conjugate(Prelec(2.0)).deriv(S.pstar), abs=1e-12)
    assert np.all(S.deriv(np.linspace(S.pstar + 1e-6, 0.999, 50)) == S.slope)


def test_hull_derivative_is_nondecreasing_step():
    H = build_envelope(Prelec(0.4), force_hull=True)
    t = np.linspace(0.001, 0.999, 5000)
    d = H.deriv(t)
    assert np.all(np.diff(d) >= 0.0)
    k = H.knots
    seg = (k[1:, 1] - k[:-1, 1]) / (k[1:, 0] - k[:-1, 0])
    assert set(np.unique(d)) <= set(seg)


def test_hull_refinement_is_stable():
    E = build_envelope(TverskyKahneman(0.5), force_hull=True, refine=True)
    assert E.fi_mass == pytest.approx(build_envelope(TverskyKahneman(0.5)).fi_mass, abs=1e-4)


def test_hull_of_square():
    t = np.linspace(0, 1, 11)
    idx = hull_envelope(t, t ** 2)
    assert len(idx) == 11
    idx = hull_envelope(t, np.sqrt(t))
    assert list(idx) == [0, 10]


def test_fi_table():
    assert build_envelope(Prelec(0.5)).fi_mass == build_envelope(Prelec(0.5)).pstar
    S = build_envelope(Prelec(2.0))
    assert S.fi_mass == pytest.approx(1.0 - S.pstar, abs=1e-15)
    assert build_envelope(Hurwicz(1.0, 0.5)).fi_mass == 1.0
    assert build_envelope(Hurwicz(0.0, 0.5)).fi_mass == 0.0


def test_fi_increases_as_alpha_falls_below_one():
    alphas = np.linspace(0.05, 0.95, 19)
    fi = [build_envelope(Prelec(a)).fi_mass for a in alphas]
    assert np.all(np.diff(fi) < 0.0)


def test_fi_jumps_at_unit_alpha():
    assert build_envelope(Prelec(1.0)).fi_mass == 1.0
    assert build_envelope(Prelec(0.999)).fi_mass < 0.9
    assert build_envelope(Prelec(1.001)).fi_mass < 0.7


def test_chord_degenerates_to_identity():
    # T~'(1) = T'(0) < 1 for this HEU: the diagonal lies below T~
    T = Hurwicz(0.56, 0.1)
    E = build_envelope(T)
    assert E.representation is Representation.IDENTITY and E.fi_mass == 1.0
    assert np.all(GRID <= conjugate(T)(GRID) + 1e-15)


def test_csv_and_json_dump():
    E = build_envelope(Prelec(0.5))
    lines = E.to_csv(11).splitlines()
    assert lines[0] == "t,Ttilde,delta,delta_prime"
    assert len(lines) == 12
    assert '"shape": "InverseSShaped"' in E.to_json()


def test_mixture_close_to_identity_keeps_base_tangent():
    T = Prelec(0.5)
    E = build_envelope(Mixture(T, 1.0 - 1e-16))
    assert E.pstar == tangent_point_inverse_s(T)
    assert np.max(np.abs(E(GRID) - GRID)) < 1e-15
