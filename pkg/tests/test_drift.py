import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srdlab.drift import (DriftSpec, apply_nemytskii, check_dimension_condition, compute_lambda,
                          validate_dissipativity, validate_growth)
from srdlab.errors import ConfigurationError, DomainError
from srdlab.spectral import PhysicalField


def test_allen_cahn_values():
    d = DriftSpec.allen_cahn()
    np.testing.assert_allclose(d(np.array([-2.0, 0.0, 0.5, 1.0])), [6.0, 0.0, 0.375, 0.0])
    assert d.degree == 3
    v = apply_nemytskii(d, PhysicalField(np.array([2.0])))
    np.testing.assert_allclose(v.values, [-6.0])


def test_allen_cahn_certificates_pass():
    d = DriftSpec.allen_cahn()
    c1 = validate_dissipativity(d)
    c2 = validate_growth(d)
    assert c1.passed and c1.asymptotic_ok and c1.worst_margin <= 1e-9
    assert c2.passed


@given(st.floats(-30, 30), st.floats(-30, 30))
@settings(max_examples=300, deadline=None)
def test_allen_cahn_dissipativity_off_grid(x, y):
    # (f(x)-f(y))(x-y) = |x-y|^2 - (x-y)^2 (x^2+xy+y^2) <= |x-y|^2 - |x-y|^4 / 4
    d = DriftSpec.allen_cahn()
    lhs = (d(np.array(x)) - d(np.array(y))) * (x - y)
    assert lhs <= (x - y) ** 2 - 0.25 * (x - y) ** 4 + 1e-9 * (1 + (x - y) ** 4 + abs(lhs))


def test_overstated_theta_rejected():
    with pytest.raises(ConfigurationError, match="dissipativity"):
        DriftSpec((0.0, 1.0, 0.0, -1.0), L_f=1.0, theta_diss=0.3, q=4, L_f_prime=3.0)


def test_understated_growth_rejected():
    with pytest.raises(ConfigurationError, match="growth"):
        DriftSpec((0.0, 1.0, 0.0, -1.0), L_f=1.0, theta_diss=0.25, q=4, L_f_prime=0.5)


@pytest.mark.parametrize("coeffs, q", [((0.0, 0.0, -1.0), 3), ((0.0, 0.0, 0.0, 1.0), 4),
                                       ((0.0, 1.0, 0.0, -1.0), 6)])
def test_shape_rules(coeffs, q):
    with pytest.raises(ConfigurationError):
        DriftSpec(coeffs, L_f=1.0, theta_diss=0.25, q=q, L_f_prime=3.0, validate=False)


def test_lipschitz_perturbation():
    d = DriftSpec((0.0, 0.0, 0.0, -1.0), L_f=1.0, theta_diss=0.25, q=4, L_f_prime=3.0,
                  lipschitz="sin", lipschitz_coeff=1.0)
    assert d(np.array(1.0)) == pytest.approx(math.sin(1.0) - 1.0)
    with pytest.raises(ConfigurationError):
        DriftSpec.allen_cahn(lipschitz="cosh")


def test_zero_drift():
    z = DriftSpec.zero()
    assert z.is_zero
    assert np.all(z(np.linspace(-3, 3, 7)) == 0)


@pytest.mark.parametrize("q, p, expected", [
    (4, 2, math.pi**2 - 1),
    (4, 4, -1.0),
    (2, 4, -1.0 + 0.25),
    (2, 2, math.pi**2 - 1 + 0.25),
])
def test_contraction_rate_cases(q, p, expected):
    assert compute_lambda(1.0, 0.25, q, p) == pytest.approx(expected)


def test_rate_domain():
    with pytest.raises(DomainError):
        compute_lambda(1.0, 0.25, 1.5, 2)


def test_dimension_condition():
    c = check_dimension_condition(1, 2, 4)
    assert c.passed and c.bound == pytest.approx(8.0)
    assert not check_dimension_condition(9, 2, 4).passed
    assert check_dimension_condition(100, 2, 2).passed


def test_certificate_dict():
    d = validate_dissipativity(DriftSpec.allen_cahn(), grid_radius=2.0, grid_step=0.1).as_dict()
    assert set(d) == {"passed", "worst_pair", "worst_margin", "asymptotic_ok", "note"}
