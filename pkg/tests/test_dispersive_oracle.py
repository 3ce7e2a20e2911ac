import math

import pytest

from meanfield.dispersive_oracle import (KatoQuery, angular_supremum, gaussian_inverse_square_closed_form,
                                         gaussian_inverse_square_moment, gaussian_kato_integral,
                                         kato_bound, kato_report, newton_g, newton_g_quadrature,
                                         pair_kato_integral, pair_l1_bound, pair_l1_closed_form,
                                         pair_l1_smoothing, pair_reduction_factor,
                                         reduced_kato_integral, sphere_area)


@pytest.mark.parametrize("d,value", [(3, math.pi), (4, math.pi / 2), (5, math.pi / 3)])
def test_kato_bound_values(d, value):
    assert kato_bound(d) == pytest.approx(value)


def test_kato_bound_needs_three_dimensions():
    with pytest.raises(ValueError):
        kato_bound(2)


@pytest.mark.parametrize("d,value", [(2, 2 * math.pi), (3, 4 * math.pi), (4, 2 * math.pi ** 2)])
def test_sphere_area(d, value):
    assert sphere_area(d) == pytest.approx(value)


@pytest.mark.parametrize("d", [3, 4, 5, 6])
@pytest.mark.parametrize("t", [0.0, 0.3, 2.0, 50.0])
def test_radial_moment_closed_form(d, t):
    assert gaussian_inverse_square_moment(t, d) == pytest.approx(
        gaussian_inverse_square_closed_form(t, d), rel=1e-10)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_gaussian_saturates_kato_constant(d):
    assert abs(gaussian_kato_integral(d) - kato_bound(d)) <= 1e-8
    assert reduced_kato_integral(d) == pytest.approx(kato_bound(d), rel=1e-12)


def test_truncated_time_integral_increases_to_the_constant():
    vals = [gaussian_kato_integral(3, T=T) for T in (0.1, 1.0, 10.0, 100.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < kato_bound(3)
    # int_{-T}^{T} 2/(1+4t^2) = 2 atan(2T)
    assert vals[1] == pytest.approx(2 * math.atan(2.0), rel=1e-9)


@pytest.mark.parametrize("v,value", [(0.0, 0.0), (0.25, math.pi), (1.0, 2 * math.pi),
                                     (4.0, 2 * math.pi)])
def test_newton_g_values(v, value):
    assert newton_g(v, 3) == pytest.approx(value)


def test_newton_g_is_continuous_and_monotone():
    vs = [0.5 + 0.01 * i for i in range(101)]
    gs = [newton_g(v, 3) for v in vs]
    assert all(a <= b for a, b in zip(gs, gs[1:]))
    assert newton_g(1 - 1e-12, 3) == pytest.approx(newton_g(1 + 1e-12, 3))
    assert newton_g(0.3, 5) == pytest.approx(0.5 * sphere_area(5) * 0.3 ** 1.5)


@pytest.mark.parametrize("d", [3, 4])
@pytest.mark.parametrize("v", [0.1, 0.5, 0.9, 0.999, 1.0, 1.1, 4.0])
def test_newton_g_by_quadrature(d, v):
    assert newton_g_quadrature(v, d) == pytest.approx(newton_g(v, d), rel=1e-9, abs=1e-12)


def test_newton_g_rejects_bad_input():
    with pytest.raises(ValueError):
        newton_g(-1.0, 3)
    with pytest.raises(ValueError):
        newton_g(1.0, 2)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
def test_pair_reduction(kappa):
    assert pair_reduction_factor(kappa) == pytest.approx(math.pi * kappa ** 2 / 2)
    assert pair_kato_integral(kappa) == pytest.approx(pair_reduction_factor(kappa), rel=1e-8)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_pair_l1_smoothing(t):
    val = pair_l1_smoothing(t)
    assert val == pytest.approx(pair_l1_closed_form(t), rel=1e-9)
    assert val <= pair_l1_bound(t)


def test_angular_supremum_at_coincidence():
    # at v = 1 in d = 3 the integral is 2 pi 2^{2-a} / (2-a) with a = 3 - 2 gamma
    gamma = 0.75
    a = 3 - 2 * gamma
    res = angular_supremum(3, gamma)
    assert res["value"] == pytest.approx(2 * math.pi * 2 ** (2 - a) / (2 - a), rel=1e-8)
    assert res["v_at_max"] == pytest.approx(1.0)
    assert res["limit_v_to_inf"] == pytest.approx(4 * math.pi)


def test_angular_supremum_grows_as_gamma_approaches_half():
    vals = [angular_supremum(3, g)["value"] for g in (1.2, 0.9, 0.7, 0.55)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_angular_supremum_in_two_dimensions():
    res = angular_supremum(2, 0.75)
    assert math.isfinite(res["value"]) and res["value"] >= 2 * math.pi


@pytest.mark.parametrize("kw", [dict(d=2), dict(d=3, gamma=0.5), dict(d=3, gamma=1.5),
                                dict(d=1, gamma=0.4), dict(d=3.5)])
def test_query_validation(kw):
    with pytest.raises(ValueError):
        KatoQuery(**kw)


def test_report_shapes():
    rep = kato_report(KatoQuery(3))
    assert set(rep) == {"d", "gamma", "computed", "bound", "abs_err"}
    assert rep["abs_err"] <= 1e-8
    rep = kato_report(KatoQuery(3, gamma=0.75))
    assert rep["bound"] is None and rep["v_at_max"] == pytest.approx(1.0)
