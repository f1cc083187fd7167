import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import e
from klshrink.errors import DomainError, ParameterError
from klshrink.marginals import log_marginal_batch
from klshrink.model import Gaussian, Harmonic, Mixture, ScaleMixture, Strawderman, Subspace, Uniform
from klshrink.risk import combined_se, risk_difference
from klshrink.shrinkage import component_weights, multiple_shrinkage, recenter, toward_subspace
from klshrink.verify import superharmonic_scan

rng = np.random.default_rng(99)
Z = rng.standard_normal((10, 5)) * 2


def test_recenter_zero_is_identity():
    np.testing.assert_array_equal(
        log_marginal_batch(recenter(Harmonic(), np.zeros(5)), Z, 0.5), log_marginal_batch(Harmonic(), Z, 0.5)
    )


def test_recenter_uniform():
    assert recenter(Uniform(), np.ones(3)) == Uniform()


@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.lists(st.floats(-3, 3), min_size=5, max_size=5))
@settings(max_examples=20, deadline=None)
def test_recenter_composes(b1, b2):
    b1, b2 = np.array(b1), np.array(b2)
    for prior in (Harmonic(), Subspace(Harmonic(), ((0, 0, 0, 0, 1.0),))):
        twice = recenter(recenter(prior, b1), b2)
        once = recenter(prior, b1 + b2)
        np.testing.assert_allclose(log_marginal_batch(twice, Z, 0.5), log_marginal_batch(once, Z, 0.5), atol=1e-12)


def test_recenter_mixture():
    mix = Mixture((Harmonic((1.0, 0, 0, 0, 0)), Harmonic((-1.0, 0, 0, 0, 0))), (0.5, 0.5))
    b = np.array([0, 2.0, 0, 0, 0])
    np.testing.assert_allclose(
        log_marginal_batch(recenter(mix, b), Z + b, 0.3), log_marginal_batch(mix, Z, 0.3), atol=1e-12
    )


def test_recentered_risk_difference(fig1):
    b = np.array([3.0, -1.0, 0.0, 2.0, 0.5])
    mu = np.array([0.5, 0.0, 0.0, 0.0, 0.0])
    a = risk_difference(recenter(Harmonic(), b), fig1, mu + b, 20_000, 3)
    c = risk_difference(Harmonic(), fig1, mu, 20_000, 4)
    assert abs(a.mean - c.mean) <= 3 * combined_se(a, c)


def test_recenter_scan_verdict(fig1):
    b = np.array([3.0, -1.0, 0.0, 2.0, 0.5])
    for prior, mode in ((Harmonic(), "m"), (ScaleMixture(Strawderman(0.5)), "sqrt"), (Gaussian(1.0), "sqrt")):
        assert superharmonic_scan(recenter(prior, b), fig1, mode).verdict == superharmonic_scan(prior, fig1, mode).verdict


def test_toward_subspace_k0():
    assert toward_subspace(Harmonic(), np.zeros((0, 5))) == Harmonic()


def test_toward_subspace_domain():
    with pytest.raises(DomainError):
        toward_subspace(Harmonic(), np.eye(5)[:3])
    with pytest.raises(ParameterError):
        toward_subspace(Gaussian(1.0), np.eye(5)[:1])


def test_subspace_risk_and_scan(fig1):
    prior = toward_subspace(Harmonic(), e(0, 5).reshape(1, -1))
    for t in (0.0, 4.0, 20.0):
        rd = risk_difference(prior, fig1, t * e(0, 5), 20_000, 5)
        assert rd.mean > 3 * rd.std_error
    assert superharmonic_scan(prior, fig1, "m").passed


def test_multiple_shrinkage_single_center():
    b = np.array([1.0, 2, 3, 4, 5])
    mix = multiple_shrinkage([b], [1.0], Harmonic())
    np.testing.assert_allclose(
        log_marginal_batch(mix, Z, 0.4), log_marginal_batch(recenter(Harmonic(), b), Z, 0.4), atol=1e-13
    )


def test_multiple_shrinkage_errors():
    with pytest.raises(ParameterError):
        multiple_shrinkage([], [], Harmonic())
    with pytest.raises(ParameterError):
        multiple_shrinkage([np.zeros(5)], [0.5, 0.5], Harmonic())


def test_multiple_shrinkage_linearity():
    c = [5 * e(0, 5), -5 * e(0, 5)]
    mix = multiple_shrinkage(c, [0.25, 0.75], Harmonic())
    for v in (1 / 6, 1.0):
        parts = [math.log(w) + log_marginal_batch(recenter(Harmonic(), b), Z, v) for w, b in zip((0.25, 0.75), c)]
        np.testing.assert_allclose(log_marginal_batch(mix, Z, v), np.logaddexp(*parts), rtol=1e-10)


def test_component_weights_adapt():
    mix = multiple_shrinkage([5 * e(0, 5), -5 * e(0, 5)], [0.5, 0.5], Harmonic())
    w = component_weights(mix, 4.8 * e(0, 5) + 0.1 * e(1, 5), 1.0)
    assert w[0] > w[1]


def test_multiple_shrinkage_scan(fig1):
    mix = multiple_shrinkage([5 * e(0, 5), -5 * e(0, 5)], [0.5, 0.5], Harmonic())
    assert superharmonic_scan(mix, fig1, "m").passed
