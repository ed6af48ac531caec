import math

import numpy as np
import pytest
from scipy.stats import norm

from conftest import make_model, mode_field
from srdlab.drift import DriftSpec
from srdlab.errors import ConfigurationError, DomainError
from srdlab.ergodic import (ErgodicRunSpec, KBEstimate, NormFunctional, default_beta, kb_average,
                            tightness_functionals, two_chain_convergence, tv_decay_profile)
from srdlab.integrator import SchemeSpec
from srdlab.montecarlo import ObservableSpec, entropy_constant
from srdlab.noise import gamma_series_integrated
from srdlab.spectral import SpectralField
from srdlab.stats import Estimate


def test_default_beta_and_functionals():
    assert default_beta(1, 2, 4, 0.0) == pytest.approx(0.2)
    # p = 4, q = 4: 1 - 3*2/(2*4*6) = 0.875, capped at 0.2
    assert default_beta(1, 4, 4, 0.0) == pytest.approx(0.2)
    assert default_beta(1, 2, 4, 0.45) == pytest.approx(0.99 * 0.05)
    labels = [f.label for f in tightness_functionals(make_model())]
    assert labels == ["lp_power(4)", "sobolev(beta=0.2, p=2)"]
    assert [f.label for f in tightness_functionals(make_model(p=4.0))] == ["lp_power(6)", "sobolev(beta=0.2, p=4)"]


def test_norm_functional_evaluates():
    c = np.array([[1.0, 0.0]])
    assert NormFunctional("lp_power", 4).evaluate(c, 5)[0] == pytest.approx(1.5)
    with pytest.raises(ConfigurationError):
        NormFunctional("sup")
    with pytest.raises(ConfigurationError):
        NormFunctional("sobolev", 2, 1.2)


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(burn_in=10), dict(observation_stride=0.7),
                                dict(n_batches=4), dict(horizons=(20,)), dict(horizons=(0.5,))])
def test_run_spec_validation(kw):
    args = dict(horizon=10, observation_stride=0.01, burn_in=1.0) | kw
    with pytest.raises(ConfigurationError):
        ErgodicRunSpec(**args)


def test_growth_statistic():
    kb = KBEstimate((10, 20, 50), {"f": (Estimate(1.0, 0.1, 10), Estimate(1.1, 0.1, 10), Estimate(2.0, 0.1, 10))})
    g = kb.growth("f")
    assert g[0] == pytest.approx(0.1 / math.hypot(0.1, 0.1))
    assert not kb.bounded("f")
    assert kb.at("f", 20).mean == 1.1 and kb.at("f").mean == 2.0
    assert kb.as_dict()["horizons"] == [10, 20, 50]


def test_linear_control_reproduces_truncated_stationary_moment(ou_model):
    spec = ErgodicRunSpec(20.0, 0.01, [NormFunctional("lp_power", 2)], 1.0, (10.0, 20.0), 10)
    kb = kb_average(spec, ou_model, SchemeSpec(1e-3), role="control")
    est = kb.at("lp_power(2)")
    s = gamma_series_integrated(0.0, 64)
    assert abs(est.mean - s.partial_sum) <= 3 * est.stderr
    assert kb.bounded("lp_power(2)")


def test_same_noise_envelope_is_exact_for_linear_model():
    model = make_model(DriftSpec.zero(), n=16)
    s = SchemeSpec(1e-3)
    spec = ErgodicRunSpec(1.0, 0.01, [ObservableSpec("linear_mode")], 0.0, (), 8)
    x0, y0 = SpectralField.mode(1, 16, 1.0), SpectralField.mode(1, 16, -1.0)
    rep = two_chain_convergence(x0, y0, spec, model, s)
    np.testing.assert_allclose(rep.envelope_distance, 2.0 * np.exp(-math.pi**2 * rep.envelope_times), rtol=1e-10)
    assert rep.envelope_ok and rep.envelope_ratio_max <= 1 + 1e-10
    assert set(rep.as_dict()) >= {"z_scores", "agree", "envelope_ok", "lambda"}


def test_chains_are_reproducible_and_distinct(ac_model):
    s = SchemeSpec(1e-3)
    spec = ErgodicRunSpec(0.5, 0.01, [ObservableSpec("linear_mode")], 0.0, (), 8)
    x0 = mode_field({1: 1.0})
    a = two_chain_convergence(x0, x0, spec, ac_model, s)
    b = two_chain_convergence(x0, x0, spec, ac_model, s)
    assert a.chain_x.at("linear_mode(k=1)") == b.chain_x.at("linear_mode(k=1)")
    # rows from one start point but independent streams differ
    assert a.chain_x.at("linear_mode(k=1)").mean != a.chain_y.at("linear_mode(k=1)").mean
    assert np.all(a.envelope_distance == 0)


def test_tv_coupling_route_lognormal_oracle():
    # F = 0: log M is Gaussian with variance 2E so E|M - 1| = 2 (2 Phi(sigma/2) - 1)
    model = make_model(DriftSpec.zero(), n=16)
    s = SchemeSpec(1e-4)
    x0, y0 = SpectralField.mode(1, 16, 0.3), SpectralField.zeros(16)
    rep = tv_decay_profile(x0, y0, [0.2], model, s, n_paths=3000, block_size=1000)
    from srdlab.coupling import run_coupling_batch
    energy = run_coupling_batch(model, s, x0, y0, 0.2, 2, role="control").v_energy[0]
    sigma = math.sqrt(2 * energy)
    exact = 2 * (2 * norm.cdf(sigma / 2) - 1)
    est = rep.coupling_bound[0]
    assert rep.uncoupled_fraction[0] == 0.0
    assert abs(est.mean - exact) <= 4 * est.stderr
    assert rep.entropy_bound[0] == pytest.approx(math.sqrt(2 * entropy_constant(model, x0, y0, 0.2)))


def test_tv_profile_entropy_envelope(ac_model):
    s = SchemeSpec(1e-4)
    x0, y0 = SpectralField.zeros(64), mode_field({1: 0.1})
    rep = tv_decay_profile(x0, y0, [0.25, 0.3], ac_model, s, n_paths=20)
    assert rep.envelope_ok
    r = rep.entropy_bound[1] / rep.entropy_bound[0]
    lam = ac_model.lam
    exact = math.sqrt(math.expm1(2 * lam * 0.25) / math.expm1(2 * lam * 0.3))
    assert r == pytest.approx(exact, rel=1e-12)
    assert r <= math.exp(-lam * 0.05)


def test_tv_profile_identical_points_and_validation(ac_model):
    s = SchemeSpec(1e-3)
    x0 = mode_field({1: 0.1})
    rep = tv_decay_profile(x0, x0, [0.1, 0.2], ac_model, s)
    assert rep.entropy_bound == (0.0, 0.0)
    assert all(e.mean == 0 for e in rep.coupling_bound)
    with pytest.raises(DomainError):
        tv_decay_profile(x0, x0, [0.2, 0.1], ac_model, s)
    with pytest.raises(DomainError):
        tv_decay_profile(x0, x0, [], ac_model, s)
