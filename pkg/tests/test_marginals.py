import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gammainc, gammaln

from conftest import e, fd_gradient, fd_laplacian
from klshrink.errors import ParameterError
from klshrink.marginals import (
    evaluate,
    grad_log_marginal,
    harmonic_scale_mixture_ratio,
    laplacian_ratio,
    log_laplacian,
    log_marginal,
    log_marginal_batch,
    posterior_mean,
    radial_profile,
    sqrt_laplacian_ratio,
)
from klshrink.model import (
    Custom,
    Gaussian,
    Harmonic,
    InverseGammaLike,
    Mixture,
    ScaleMixture,
    Strawderman,
    Subspace,
    Uniform,
)

rng = np.random.default_rng(12345)
Z5 = rng.standard_normal((12, 5)) * np.array([[0.3], [1.0], [3.0]]).repeat(4, axis=0)


def logm(prior, v):
    return lambda z: log_marginal_batch(prior, np.atleast_2d(z), v)[0]


# --- closed forms ----------------------------------------------------------


def test_uniform_is_zero():
    mv = log_marginal(Uniform(), rng.standard_normal(4), 0.7)
    assert mv.log_value == 0.0 and mv.abs_error_bound == 0.0


def test_gaussian_reference_value():
    mv = log_marginal(Gaussian(3.0), np.zeros(2), 1.0)
    assert mv.log_value == pytest.approx(-math.log(8 * math.pi), abs=1e-14)
    assert mv.abs_error_bound == 0.0


def test_gaussian_2d_quadrature_oracle():
    from scipy.integrate import dblquad

    z, s2, v = np.array([0.4, -1.1]), 3.0, 1.0
    f = lambda a, b: math.exp(-((z[0] - a) ** 2 + (z[1] - b) ** 2) / (2 * v) - (a * a + b * b) / (2 * s2)) / (
        (2 * math.pi) ** 2 * v * s2
    )
    val = dblquad(f, -15, 15, -15, 15, epsabs=1e-13)[0]
    assert log_marginal(Gaussian(s2), z, v).log_value == pytest.approx(math.log(val), abs=1e-9)


def test_harmonic_small_u_limit():
    # phi_5(u) = u^-3 gamma(3/2, u^2/2) -> 2^(1 - 5/2) / (5/2 - 1) = 0.23570
    u = 1e-3
    direct = quad(lambda t: math.sqrt(t) * math.exp(-t), 0, u * u / 2, epsabs=0, epsrel=1e-13)[0] / u**3
    assert direct == pytest.approx(2 ** (-1.5) / 1.5, rel=1e-6)
    # the package marginal is proportional to phi_p; compare the shape at two radii
    lm = logm(Harmonic(), 1.0)
    z1, z2 = u * e(0, 5), 2.0 * e(0, 5)
    phi = lambda r: r ** (-3) * gammainc(1.5, r * r / 2) * math.exp(gammaln(1.5))
    assert lm(z1) - lm(z2) == pytest.approx(math.log(phi(u) / phi(2.0)), abs=1e-10)


@pytest.mark.parametrize("p", [3, 5, 8])
def test_harmonic_matches_convolution(p):
    # m_H(z) = int |mu|^-(p-2) N(z; mu, v) d mu; radial integral in mu, oracle by quad over |mu| and angle
    v, r = 0.7, 1.3
    from scipy.special import ive

    nu = p / 2 - 1

    def integrand(t):
        # angular average of exp(-(r^2 + t^2 - 2 r t cos)/2v) in p dims
        x = r * t / v
        ang = math.gamma(p / 2) * (2 / x) ** nu * ive(nu, x) if x > 0 else 1.0
        area = 2 * math.pi ** (p / 2) / math.gamma(p / 2)
        return area * t ** (p - 1) * t ** (-(p - 2)) * math.exp(-((r - t) ** 2) / (2 * v)) * ang

    val = quad(integrand, 0, np.inf, limit=200, epsrel=1e-12)[0] * (2 * math.pi * v) ** (-p / 2)
    z = r * e(0, p)
    assert log_marginal(Harmonic(), z, v).log_value == pytest.approx(math.log(val), abs=1e-9)


def test_harmonic_large_argument_branch_continuity():
    lm = logm(Harmonic(), 1.0)
    # series / incomplete-gamma switch at rho / 2v = p / 2
    r0 = math.sqrt(5.0)
    vals = [lm(r * e(0, 5)) for r in (r0 - 1e-7, r0, r0 + 1e-7)]
    assert abs(vals[0] - vals[1]) < 1e-6 and abs(vals[2] - vals[1]) < 1e-6


def test_strawderman_a2_matches_harmonic():
    Z = np.vstack([Z5, 7.0 * e(1, 5), 25.0 * e(2, 5)])
    diff = log_marginal_batch(ScaleMixture(Strawderman(2.0)), Z, 1.0) - log_marginal_batch(Harmonic(), Z, 1.0)
    np.testing.assert_allclose(diff, diff[0], rtol=0, atol=1e-9)
    assert diff[0] == pytest.approx(math.log(harmonic_scale_mixture_ratio(5, 1.0)), abs=1e-9)


@pytest.mark.parametrize("h", [Strawderman(0.5), Strawderman(1.5), InverseGammaLike(-1.0, 0.5)])
@pytest.mark.parametrize("r,v", [(0.0, 1.0), (0.8, 0.3), (4.0, 1.0), (30.0, 0.5)])
def test_scale_mixture_against_quad(h, r, v):
    p, v0 = 5, 1.0

    def f(t):
        s = t / (1 - t)
        c = v + s * v0
        return math.exp(float(h.log_h(s)) - 0.5 * p * math.log(2 * math.pi * c) - r * r / (2 * c)) / (1 - t) ** 2

    val = quad(f, 0, 1, limit=400, epsabs=0, epsrel=1e-12, points=[1e-6, 1e-3, 0.5, 0.99])[0]
    mv = log_marginal(ScaleMixture(h, v0), r * e(0, p), v)
    assert mv.log_value == pytest.approx(math.log(val), abs=1e-8)
    assert mv.abs_error_bound <= 1e-10


def test_custom_matches_strawderman():
    c = ScaleMixture(Custom(lambda s: -1.5 * np.log1p(s)))
    s = ScaleMixture(Strawderman(0.5))
    np.testing.assert_allclose(log_marginal_batch(c, Z5, 0.6), log_marginal_batch(s, Z5, 0.6), atol=1e-12)


def test_nonpositive_variance():
    with pytest.raises(ParameterError):
        log_marginal(Harmonic(), e(0, 5), 0.0)


# --- derivatives -----------------------------------------------------------

DERIV_PRIORS = [
    Gaussian(2.0, (0.5, 0, 0, 0, -1.0)),
    Harmonic(),
    ScaleMixture(Strawderman(0.5)),
    ScaleMixture(InverseGammaLike(-1.0, 1.0), 2.0),
    Subspace(Harmonic(), ((0, 0, 0, 0, 1.0),), (0, 0, 0, 0, 2.0)),
    Mixture((Harmonic((2.0, 0, 0, 0, 0)), Harmonic((-2.0, 0, 0, 0, 0))), (0.3, 0.7)),
    Mixture((Gaussian(1.0), Gaussian(4.0, (1.0, 1.0, 0, 0, 0))), (0.5, 0.5)),
]


@pytest.mark.parametrize("prior", DERIV_PRIORS, ids=lambda p: type(p).__name__)
def test_gradient_and_laplacian_fd(prior):
    v = 0.6
    f = logm(prior, v)
    for z in Z5[::3]:
        g = grad_log_marginal(prior, z, v)
        np.testing.assert_allclose(g, fd_gradient(f, z), rtol=1e-6, atol=1e-7)
        lap_log = log_laplacian(prior, z, v)
        assert lap_log == pytest.approx(fd_laplacian(f, z), rel=1e-5, abs=1e-6)
        assert laplacian_ratio(prior, z, v) == pytest.approx(lap_log + g @ g, rel=1e-9, abs=1e-12)


def test_gaussian_gradient_closed_form():
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(grad_log_marginal(Gaussian(3.0), z, 1.0), -z / 4.0, rtol=1e-15)


def test_uniform_derivatives_zero():
    z = np.array([1.0, -2.0, 0.5])
    assert np.all(grad_log_marginal(Uniform(), z, 1.0) == 0)
    assert laplacian_ratio(Uniform(), z, 1.0) == 0
    assert sqrt_laplacian_ratio(Uniform(), z, 1.0) == 0


def test_harmonic_gradient_fd_relative():
    z = 3.0 * e(0, 5)
    g = grad_log_marginal(Harmonic(), z, 1.0)
    assert g[0] == pytest.approx(fd_gradient(logm(Harmonic(), 1.0), z)[0], rel=1e-6)


def test_gaussian_laplacian_at_origin():
    s2 = 2.5
    assert laplacian_ratio(Gaussian(s2), np.zeros(3), 1.0) == pytest.approx(-3 / (1 + s2), rel=1e-14)


def test_harmonic_superharmonic_points():
    for z in Z5:
        assert laplacian_ratio(Harmonic(), z, 1.0) <= 1e-12


def test_laplacian_at_center_is_finite():
    for prior in (Harmonic(), ScaleMixture(Strawderman(0.5))):
        val = laplacian_ratio(prior, np.zeros(5), 1.0)
        near = laplacian_ratio(prior, 1e-6 * e(0, 5), 1.0)
        assert np.isfinite(val) and val == pytest.approx(near, rel=1e-9)


def test_sqrt_ratio_strawderman_nonpositive():
    for v in (1 / 6, 0.5, 1.0):
        for z in Z5:
            assert sqrt_laplacian_ratio(ScaleMixture(Strawderman(0.5)), z, v) <= 1e-8


def test_sqrt_ratio_gaussian_positive_far_out():
    assert sqrt_laplacian_ratio(Gaussian(1.0), 10.0 * e(0, 5), 1.0) > 0


def test_pointwise_sqrt_identity():
    for prior in (Gaussian(1.0), Harmonic(), ScaleMixture(Strawderman(0.7))):
        for z in Z5:
            ev = evaluate(prior, z.reshape(1, -1), 0.5)
            g2 = float(ev.grad[0] @ ev.grad[0])
            lhs = 2 * sqrt_laplacian_ratio(prior, z, 0.5)
            rhs = float(ev.lap[0]) - 0.5 * g2
            assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("prior", [Harmonic(), ScaleMixture(Strawderman(0.5)), Gaussian(1.0)])
def test_radial_profile_consistency(prior):
    prof = radial_profile(prior, 5, 0.8)
    for r in (0.2, 1.0, 3.0):
        z = r * math.sqrt(0.8) * e(2, 5)
        assert prof.g(r) == pytest.approx(log_marginal(prior, z, 0.8).log_value, abs=1e-10)
        assert prof.laplacian_ratio(r) == pytest.approx(laplacian_ratio(prior, z, 0.8), rel=1e-7, abs=1e-10)


# --- posterior mean --------------------------------------------------------


def test_posterior_mean_closed_forms():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(posterior_mean(Uniform(), x, 1.0), x)
    np.testing.assert_allclose(posterior_mean(Gaussian(1.0), x, 1.0), x / 2, rtol=1e-15)


def test_harmonic_posterior_mean_shrinks():
    pm = posterior_mean(Harmonic(), 5.0 * e(0, 5), 1.0)
    assert np.linalg.norm(pm) < 5.0
    assert pm[0] > 0


def test_harmonic_posterior_mean_mc_oracle():
    # importance sampling from the likelihood: E[mu w] / E[w], w = |mu|^-(p-2)
    p, x = 5, 5.0 * e(0, 5)
    g = np.random.default_rng(7)
    mu = x + g.standard_normal((400_000, p))
    w = np.linalg.norm(mu, axis=1) ** (-(p - 2))
    est = (w[:, None] * mu).sum(0) / w.sum()
    se = np.sqrt(((w[:, None] * (mu - est)) ** 2).sum(0)) / w.sum()
    np.testing.assert_array_less(np.abs(est - posterior_mean(Harmonic(), x, 1.0)), 4 * se + 1e-12)


# --- structural invariants -------------------------------------------------


@given(
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.sampled_from([Harmonic, lambda c: Gaussian(2.0, c), lambda c: ScaleMixture(Strawderman(0.5), 1.0, c)]),
)
@settings(max_examples=25, deadline=None)
def test_recentering_equivariance(z, b, make):
    z, b = np.array(z), np.array(b)
    centered = log_marginal_batch(make(tuple(b)), z.reshape(1, -1), 0.7)[0]
    origin = log_marginal_batch(make(None), (z - b).reshape(1, -1), 0.7)[0]
    assert centered == origin


@given(st.floats(0.0, 1.0), st.lists(st.floats(-4, 4), min_size=5, max_size=5))
@settings(max_examples=25, deadline=None)
def test_mixture_linearity(w, z):
    z = np.array(z).reshape(1, -1)
    c1, c2 = Harmonic((2.0, 0, 0, 0, 0)), Harmonic((-2.0, 0, 0, 0, 0))
    mix = Mixture((c1, c2), (w, 1 - w))
    expect = w * math.exp(log_marginal_batch(c1, z, 0.5)[0]) + (1 - w) * math.exp(log_marginal_batch(c2, z, 0.5)[0])
    assert math.exp(log_marginal_batch(mix, z, 0.5)[0]) == pytest.approx(expect, rel=1e-10)


def test_subspace_factorizes():
    # flat along e5, 4-dim harmonic on the rest
    prior = Subspace(Harmonic(), ((0, 0, 0, 0, 1.0),))
    Z = Z5.copy()
    full = log_marginal_batch(prior, Z, 0.5)
    part = log_marginal_batch(Harmonic(), Z[:, :4], 0.5)
    np.testing.assert_allclose(full, part, atol=1e-13)


@pytest.mark.parametrize("prior", [Gaussian(1.0), Harmonic(), ScaleMixture(Strawderman(0.5))], ids=str)
def test_finiteness_propagation(prior, fig1):
    for v in np.linspace(fig1.v_w, fig1.v_x, 5):
        lhs = log_marginal_batch(prior, Z5, v)
        rhs = 0.5 * fig1.p * math.log(fig1.v_x / fig1.v_w) + log_marginal_batch(prior, Z5, fig1.v_x)
        assert np.all(lhs <= rhs + 1e-12)
