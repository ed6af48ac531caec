import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from srdlab.errors import ConfigurationError, DomainError
from srdlab.spectral import (GridSpec, PhysicalField, SpectralField, analyze, apply_laplacian_power,
                             default_n_quad, eigenvalues, gradient_l2_norm, heat_semigroup, lp_norm,
                             lp_power_array, sobolev_slobodeckij_norm, synthesize, to_physical,
                             to_spectral)

coeff_arrays = st.integers(1, 48).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False)))


def test_eigenvalues_are_pi_squared_k_squared():
    np.testing.assert_allclose(eigenvalues(4), math.pi**2 * np.array([1, 4, 9, 16]))


def test_default_quadrature_for_benchmark():
    assert default_n_quad(64) == 131
    g = GridSpec(64)
    assert g.n_quad == 131
    np.testing.assert_allclose(g.nodes, np.arange(1, 132) / 132)


def test_synthesis_matches_sine_formula():
    c = np.array([0.5, -1.0, 0.25])
    xi = np.arange(1, 10) / 10
    direct = sum(ck * math.sqrt(2) * np.sin((k + 1) * math.pi * xi) for k, ck in enumerate(c))
    np.testing.assert_allclose(synthesize(c, 9), direct, atol=1e-13)


@given(coeff_arrays)
@settings(max_examples=60, deadline=None)
def test_round_trip_is_identity(c):
    n_quad = 2 * c.size + 3
    back = analyze(synthesize(c, n_quad), c.size)
    np.testing.assert_allclose(back, c, atol=1e-11 * (1 + np.abs(c).max()))


def test_large_transform_uses_same_convention():
    # above the dense-matrix threshold the DST path must agree with the direct sum
    c = np.random.default_rng(0).standard_normal(300)
    vals = synthesize(c, 601)
    xi = np.arange(1, 602) / 602
    k = np.arange(1, 301)
    direct = math.sqrt(2) * np.sin(np.pi * np.outer(xi, k)) @ c
    np.testing.assert_allclose(vals, direct, atol=1e-10)
    np.testing.assert_allclose(analyze(vals, 300), c, atol=1e-10)


@given(coeff_arrays)
@settings(max_examples=60, deadline=None)
def test_parseval(c):
    g = GridSpec(c.size)
    assert lp_norm(SpectralField(c), 2, g) ** 2 == pytest.approx(np.sum(c**2), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("p, exact", [(4, 1.5), (6, 2.5)])
def test_even_lp_powers_of_first_mode(p, exact):
    # int_0^1 (sqrt2 sin pi x)^p dx = 2^(p/2) (p-1)!! / p!!
    assert lp_power_array(np.array([1.0]), p, 3) == pytest.approx(exact, rel=1e-12)


def test_odd_power_against_quadrature():
    c = np.array([1.0, 0.3, -0.2])
    f = lambda x: abs(sum(ck * math.sqrt(2) * math.sin((k + 1) * math.pi * x) for k, ck in enumerate(c))) ** 3
    ref, _ = integrate.quad(f, 0, 1, limit=200, points=[0.5])
    assert lp_power_array(c, 3, 7) == pytest.approx(ref, rel=1e-4)


def test_lp_monotone_in_p():
    u = SpectralField([0.4, -0.7, 0.1, 0.3])
    g = GridSpec(4)
    norms = [lp_norm(u, p, g) for p in (2, 3, 4, 6)]
    assert all(a <= b + 1e-12 for a, b in zip(norms, norms[1:]))


def _sobolev_reference(c, beta, p):
    u = lambda x: sum(ck * math.sqrt(2) * math.sin((k + 1) * math.pi * x) for k, ck in enumerate(c))
    du = lambda x: sum(ck * math.sqrt(2) * (k + 1) * math.pi * math.cos((k + 1) * math.pi * x)
                       for k, ck in enumerate(c))

    # substitute r = x - y > 0: 2 int_0^1 r^(-1 - beta p) int_0^(1-r) |u(y+r)-u(y)|^p dy dr
    def inner(r):
        if r < 1e-9:
            return integrate.quad(lambda y: abs(du(y)) ** p, 0, 1)[0] * r ** (p - 1 - beta * p)
        val = integrate.quad(lambda y: abs(u(y + r) - u(y)) ** p, 0, 1 - r, limit=200)[0]
        return val * r ** (-1 - beta * p)

    semi = 2 * integrate.quad(inner, 0, 1, limit=200)[0]
    lp = integrate.quad(lambda x: abs(u(x)) ** p, 0, 1, limit=200)[0]
    return (lp + semi) ** (1 / p)


@pytest.mark.parametrize("c, beta, p", [([1.0], 0.2, 2.0), ([0.5, -0.4, 0.2], 0.3, 2.0),
                                        ([1.0, 0.3], 0.2, 4.0), ([0.8], 0.4, 3.0)])
def test_sobolev_norm_matches_adaptive_quadrature(c, beta, p):
    g = GridSpec(len(c), 255)
    got = sobolev_slobodeckij_norm(SpectralField(c), beta, p, g)
    assert got == pytest.approx(_sobolev_reference(c, beta, p), rel=2e-3)


def test_sobolev_rejects_bad_beta():
    with pytest.raises(DomainError):
        sobolev_slobodeckij_norm(SpectralField([1.0]), 1.0, 2, GridSpec(1))


def test_sobolev_dominates_lp():
    u = SpectralField([0.3, 0.2, -0.5])
    g = GridSpec(3)
    assert sobolev_slobodeckij_norm(u, 0.2, 2, g) > lp_norm(u, 2, g)


def test_heat_semigroup_and_gradient():
    u = SpectralField([1.0, 2.0])
    v = heat_semigroup(u, 0.1)
    np.testing.assert_allclose(v.coeffs, [math.exp(-math.pi**2 * 0.1), 2 * math.exp(-4 * math.pi**2 * 0.1)])
    assert heat_semigroup(u, 0) is u
    with pytest.raises(DomainError):
        heat_semigroup(u, -1)
    assert gradient_l2_norm(u) == pytest.approx(math.sqrt(math.pi**2 * (1 + 16)))
    np.testing.assert_allclose(apply_laplacian_power(u, 0.5).coeffs, [math.pi, 4 * math.pi])


@given(coeff_arrays, st.floats(0, 2), st.floats(0, 2))
@settings(max_examples=40, deadline=None)
def test_heat_semigroup_property(c, s, t):
    u = SpectralField(c)
    np.testing.assert_allclose(heat_semigroup(heat_semigroup(u, s), t).coeffs,
                               heat_semigroup(u, s + t).coeffs, rtol=1e-10, atol=1e-300)
    g = GridSpec(c.size)
    assert lp_norm(heat_semigroup(u, t), 2, g) <= lp_norm(u, 2, g) + 1e-12


def test_field_grid_checks():
    g = GridSpec(4)
    with pytest.raises(ConfigurationError):
        to_physical(SpectralField.zeros(5), g)
    with pytest.raises(ConfigurationError):
        to_spectral(PhysicalField(np.zeros(3)), g)
    u = SpectralField.mode(2, 4, 3.0)
    np.testing.assert_allclose(to_spectral(to_physical(u, g), g).coeffs, [0, 3, 0, 0], atol=1e-13)


def test_fields_are_immutable():
    u = SpectralField([1.0, 2.0])
    with pytest.raises(ValueError):
        u.coeffs[0] = 3.0
