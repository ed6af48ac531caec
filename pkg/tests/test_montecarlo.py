import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LAM_AC, mode_field
from srdlab.coupling import entropy_bound, run_coupling_batch
from srdlab.errors import ConfigurationError, DomainError
from srdlab.integrator import SchemeSpec
from srdlab.montecarlo import (INCONCLUSIVE, SATISFIED, VIOLATED, ObservableSpec, check_entropy_bound,
                               check_gradient_estimate, check_log_harnack, check_power_harnack,
                               check_power_moment, clear_cache, decide, default_menu,
                               deterministic_endpoint, endpoints, entropy_constant, estimate_semigroup,
                               gradient_constant, ou_trig_derivative, power_harnack_constant,
                               power_moment_constant)
from srdlab.spectral import SpectralField
from srdlab.stats import Estimate


def test_decision_rule():
    assert decide(Estimate(1.0, 0.1, 10), Estimate(0.8, 0.0, 10)) == SATISFIED
    assert decide(Estimate(1.0, 0.01, 10), Estimate(0.8, 0.01, 10)) == VIOLATED
    assert decide(Estimate(math.nan, 0.1, 10), Estimate(0.8, 0.0, 10)) == INCONCLUSIVE


@given(st.floats(-10, 10), st.floats(0, 1), st.floats(-10, 10), st.floats(0, 1))
@settings(max_examples=200, deadline=None)
def test_decision_threshold_property(l, sl, r, sr):
    v = decide(Estimate(l, sl, 2), Estimate(r, sr, 2))
    assert (v == SATISFIED) == (l <= r + 3 * math.hypot(sl, sr))


def test_observable_menu_values():
    c = np.array([[0.5, 2.0], [-3.0, 0.0]])
    np.testing.assert_allclose(ObservableSpec("bounded_trig", a=2, b=1)(c), 2 + np.sin([0.5, -3.0]))
    np.testing.assert_allclose(ObservableSpec("clipped_exponential", mode=2, b=1, clip=1)(c), [math.e, 1.0])
    ball = ObservableSpec.ball(SpectralField([0.5, 2.0]), 0.1, 0.2)
    np.testing.assert_allclose(ball(c), [1.2, 0.2])
    np.testing.assert_allclose(ObservableSpec("quadratic_mode", b=2)(c), [0.5, 18.0])
    np.testing.assert_allclose(ObservableSpec.constant(3.0)(c), [3.0, 3.0])
    assert ObservableSpec("bounded_trig", a=2, b=1).sup == 3
    assert not ObservableSpec("linear_mode").bounded
    assert ball.label == "indicator_ball(r=0.1, floor=0.2)"
    assert not ObservableSpec.ball(SpectralField([0.0]), 1.0).strictly_positive


@pytest.mark.parametrize("kw", [dict(kind="gauss"), dict(kind="bounded_trig", a=1, b=1),
                                dict(kind="indicator_ball"), dict(kind="linear_mode", mode=0),
                                dict(kind="clipped_exponential", clip=0)])
def test_observable_validation(kw):
    with pytest.raises(ConfigurationError):
        ObservableSpec(**kw)
    with pytest.raises(ConfigurationError):
        ObservableSpec("linear_mode", mode=5)(np.zeros(3))


def test_closed_form_constants(ac_model):
    x0, y0 = mode_field({1: 0.1}), SpectralField.zeros(64)
    C = entropy_constant(ac_model, x0, y0, 0.5)
    assert C == pytest.approx(LAM_AC * 0.01 / math.expm1(LAM_AC), rel=1e-12)
    assert C == pytest.approx(1.2472257e-5, rel=1e-6)
    assert power_moment_constant(ac_model, x0, y0, 0.5, 2.0) == pytest.approx(2 * C)
    assert power_harnack_constant(ac_model, x0, y0, 0.5, 1.5) == pytest.approx(3 * C)
    assert gradient_constant(ac_model, 0.5) == pytest.approx(math.sqrt(2 * LAM_AC / math.expm1(LAM_AC)))
    with pytest.raises(DomainError):
        power_moment_constant(ac_model, x0, y0, 0.5, 1.0)


@pytest.mark.parametrize("lam", [0.0, 1e-300, 1e-9, -1e-9])
def test_entropy_bound_rate_zero_limit(lam):
    # lambda -> 0 gives ||G^-1||^2 ||x - y||^2 / (2T)
    assert entropy_bound(lam, 2.0, 0.5, 0.3) == pytest.approx(0.25 * 0.09 / 4.0, rel=1e-8)


def test_entropy_bound_negative_rate():
    lam = -1.0
    assert entropy_bound(lam, 0.5, 1.0, 0.1) == pytest.approx(lam * 0.01 / math.expm1(2 * lam * 0.5))


def test_ou_semigroup_oracle(ou_model, coarse_scheme):
    phi = ObservableSpec("bounded_trig", a=2.0, b=1.0)
    x0 = mode_field({1: 1.0})
    T = 0.1
    est = estimate_semigroup(phi, x0, T, ou_model, coarse_scheme, 20000, block_size=5000)
    lam = math.pi**2
    var = -math.expm1(-2 * lam * T) / (2 * lam)
    exact = 2.0 + math.exp(-var / 2) * math.sin(math.exp(-lam * T))
    assert abs(est.mean - exact) <= 4 * est.stderr


def test_ou_derivative_formula_against_difference_quotient(ou_model):
    phi = ObservableSpec("bounded_trig", a=2.0, b=1.0)
    e1 = mode_field({1: 1.0})
    T = 0.1
    lam = math.pi**2
    var = -math.expm1(-2 * lam * T) / (2 * lam)
    pt = lambda x1: 2.0 + math.exp(-var / 2) * math.sin(math.exp(-lam * T) * x1)
    h = 1e-6
    fd = (pt(0.7 + h) - pt(0.7 - h)) / (2 * h)
    assert ou_trig_derivative(phi, 0.7 * e1, e1, T, ou_model.noise) == pytest.approx(fd, rel=1e-7)
    with pytest.raises(DomainError):
        ou_trig_derivative(ObservableSpec("linear_mode"), e1, e1, T, ou_model.noise)


def test_gradient_check_on_linear_model(ou_model, coarse_scheme):
    phi = ObservableSpec("bounded_trig", a=2.0, b=1.0)
    x0, e1 = mode_field({1: 0.5}), mode_field({1: 1.0})
    rep = check_gradient_estimate(phi, x0, e1, 0.01, 0.1, ou_model, coarse_scheme, n_paths=2000,
                                  block_size=1000)
    exact = ou_trig_derivative(phi, x0, e1, 0.1, ou_model.noise)
    fd = rep.details["fd"]
    assert abs(fd.mean - exact) <= 4 * fd.stderr + 1e-5
    assert rep.verdict == SATISFIED
    assert rep.details["crn_stderr"] < rep.details["independent_stderr"]


def test_harnack_checks_on_linear_model(ou_model, coarse_scheme):
    x0, y0 = mode_field({1: 0.2}), SpectralField.zeros(64)
    for phi in default_menu(ou_model, coarse_scheme, x0, 0.1):
        assert check_log_harnack(phi, x0, y0, 0.1, ou_model, coarse_scheme, 500).verdict == SATISFIED
        assert check_power_harnack(phi, x0, y0, 0.1, 2.0, ou_model, coarse_scheme, 500).verdict == SATISFIED


def test_constant_observable_is_exact(ac_model, coarse_scheme):
    phi = ObservableSpec.constant(2.0)
    x0, y0 = mode_field({1: 0.1}), SpectralField.zeros(64)
    rep = check_power_harnack(phi, x0, y0, 0.1, 2.0, ac_model, coarse_scheme, 10)
    assert rep.lhs.mean == pytest.approx(4.0) and rep.lhs.stderr == 0
    assert rep.rhs.mean == pytest.approx(4.0 * math.exp(rep.bound_constant))
    assert rep.verdict == SATISFIED and rep.slack == math.inf
    with pytest.raises(DomainError):
        check_log_harnack(ObservableSpec.ball(SpectralField.zeros(64), 1.0), x0, y0, 0.1, ac_model,
                          coarse_scheme, 10)


def test_endpoint_cache(ac_model, coarse_scheme):
    clear_cache()
    a = endpoints(ac_model, coarse_scheme, mode_field({1: 1.0}), 0.01, 4)
    b = endpoints(ac_model, coarse_scheme, mode_field({1: 1.0}), 0.01, 4, n_workers=2)
    assert a is b
    assert not a.flags.writeable
    clear_cache()
    c = endpoints(ac_model, coarse_scheme, mode_field({1: 1.0}), 0.01, 4)
    assert c is not a
    np.testing.assert_array_equal(a, c)


def test_deterministic_endpoint_and_menu(ac_model, coarse_scheme):
    e = deterministic_endpoint(ac_model, coarse_scheme, SpectralField.zeros(64), 0.05)
    assert np.all(e.coeffs == 0)
    menu = default_menu(ac_model, coarse_scheme, SpectralField.zeros(64), 0.05)
    assert [m.kind for m in menu] == ["bounded_trig", "clipped_exponential", "indicator_ball"]
    assert all(m.bounded and m.strictly_positive for m in menu)


def test_weight_checks_inconclusive_without_coupling(ac_model):
    s = SchemeSpec(1e-3)
    x0, y0 = mode_field({1: 0.05}), SpectralField.zeros(64)
    b = run_coupling_batch(ac_model, s, x0, y0, 0.04, 50)
    failed = replace(b, coupled=np.zeros_like(b.coupled))
    assert check_entropy_bound(x0, y0, 0.04, ac_model, s, coupling=failed).verdict == INCONCLUSIVE
    assert check_power_moment(x0, y0, 0.04, 2.0, ac_model, s, coupling=failed).verdict == INCONCLUSIVE
    rep = check_power_moment(x0, y0, 0.04, 2.0, ac_model, s, coupling=b)
    assert set(rep.details) >= {"excess_kurtosis", "heavy_tail_warning", "s"}
    assert rep.as_dict()["quantity"] == "power_moment_bound"
