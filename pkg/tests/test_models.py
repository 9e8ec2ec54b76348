import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from varembed.models import (
    GaussianMixture,
    IsotropicGaussian,
    MultivariateGaussian,
    Ring,
    SmoothedUniformBall,
    TruncatedExponential,
    UniformBox,
    density_from_dict,
    log_density,
    prior_from_dict,
    prior_log_density,
    sample_prior,
    score,
)

DENSITIES = [
    MultivariateGaussian([0.5, -1.0], [[2.0, 0.3], [0.3, 0.5]]),
    GaussianMixture([0.2, 0.5, 0.3], [[0, 0], [1, 1], [-1, 2]], 0.3),
    SmoothedUniformBall([0.1, 0.2], 0.8, sharpness=12.0),
    Ring([0.0, 0.0], 1.0, 0.25),
]


def test_gaussian_origin():
    p = MultivariateGaussian([0, 0], np.eye(2))
    assert log_density(p, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_mixture_symmetry():
    mu = np.array([1.5, -0.5])
    mix = GaussianMixture.equal([mu, -mu], 1.0)
    single = MultivariateGaussian(mu, np.eye(2))
    assert mix.log_density([0.0, 0.0]) == pytest.approx(single.log_density([0.0, 0.0]), abs=1e-14)
    np.testing.assert_allclose(score(mix, [0.0, 0.0]), [0.0, 0.0], atol=1e-15)


def test_ring_radial_difference():
    ring = Ring([0, 0], 1.0, 0.1)
    diff = ring.log_density([1.0, 0.0]) - ring.log_density([0.0, 1.2])
    assert diff == pytest.approx(2.0, abs=1e-12)


def test_gaussian_score_formula():
    p = MultivariateGaussian([0, 0], np.diag([4.0, 1.0]))
    np.testing.assert_allclose(score(p, [2.0, 1.0]), [-0.5, -1.0], atol=1e-15)


def test_underflow_sentinel():
    p = MultivariateGaussian([0.0], [[1.0]])
    assert p.log_density([100.0]) == -np.inf
    assert np.isfinite(p.log_density([30.0]))


def test_mixture_weights_validated():
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.6], [[0.0], [1.0]], 1.0)


@pytest.mark.parametrize("density", DENSITIES, ids=lambda d: d.kind)
def test_score_matches_finite_differences(density):
    rng = np.random.default_rng(7)
    h = 1e-5
    checked = 0
    for x in rng.uniform(-2, 2, size=(100, 2)):
        if density.log_density(x) < math.log(1e-12):
            continue
        fd = np.array([(density.log_density(x + h * e) - density.log_density(x - h * e)) / (2 * h)
                       for e in np.eye(2)])
        s = density.score(x)
        assert np.linalg.norm(s - fd) <= 1e-4 * max(np.linalg.norm(fd), 1.0)
        checked += 1
    assert checked > 20


@pytest.mark.parametrize("density", DENSITIES, ids=lambda d: d.kind)
def test_density_integrates_to_one(density):
    L = 6.0
    val, _ = integrate.dblquad(
        lambda y, x: math.exp(density.log_density([x, y])), -L, L, -L, L, epsabs=1e-7, epsrel=1e-7
    )
    assert val == pytest.approx(1.0, abs=1e-4)


def test_one_dimensional_ball_normalized():
    ball = SmoothedUniformBall([0.5], 0.5)
    val, _ = integrate.quad(lambda x: math.exp(ball.log_density([x])), -1, 2, points=[0, 1], limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_ball_sharp_limit():
    ball = SmoothedUniformBall([0.0, 0.0], 1.0, sharpness=1e3)
    assert ball.log_density([0.0, 0.0]) == pytest.approx(-math.log(math.pi), abs=1e-3)


def test_ball_default_sharpness():
    assert SmoothedUniformBall([0.0], 0.5).sharpness == pytest.approx(100.0)


def test_tape_expression_agrees_with_numpy():
    from varembed.numerics import Tape, grad_of_scalar

    x = np.array([[0.3, -0.2], [1.1, 0.4]])
    for density in DENSITIES:
        tape = Tape()
        v = tape.variable(x)
        out = density.log_density_expr(v)
        np.testing.assert_allclose(out.value, density.log_density(x), rtol=1e-13)
        g = grad_of_scalar(tape, out.sum(), v)
        np.testing.assert_allclose(g, density.score(x), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("density", DENSITIES, ids=lambda d: d.kind)
def test_density_roundtrip(density):
    again = density_from_dict(density.to_dict())
    x = np.array([[0.2, 0.7], [-1.0, 0.1]])
    np.testing.assert_array_equal(again.log_density(x), density.log_density(x))


# -- priors -------------------------------------------------------------------


def test_prior_values():
    assert prior_log_density(IsotropicGaussian(1.0, 1), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert prior_log_density(TruncatedExponential(2.0), [-1.0]) == pytest.approx(math.log(2) - 2)
    assert prior_log_density(UniformBox([[0, 1]]), [0.3]) == 0.0
    assert prior_log_density(UniformBox([[0, 1]]), [1.3]) == -np.inf
    assert prior_log_density(TruncatedExponential(2.0), [0.5]) == -np.inf


def test_gaussian_sample_mean():
    z = sample_prior(IsotropicGaussian(1.0, 1), 10_000, 42)
    assert abs(z.mean()) < 0.05


def test_exponential_samples_nonpositive():
    z = sample_prior(TruncatedExponential(3.0), 5000, 1)
    assert np.all(z <= 0)
    assert z.mean() == pytest.approx(-1 / 3, abs=5 * (1 / 3) / math.sqrt(5000))


def test_sampling_deterministic():
    for prior in (IsotropicGaussian(0.7, 2), UniformBox([[0, 1], [-1, 1]]), TruncatedExponential(5.0)):
        np.testing.assert_array_equal(prior.sample(50, 9), prior.sample(50, 9))


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_sample_moments_within_bounds(seed):
    n = 10_000
    for prior, mean, var in (
        (IsotropicGaussian(1.5, 1), 0.0, 2.25),
        (UniformBox([[0.0, 2.0]]), 1.0, 4 / 12),
        (TruncatedExponential(2.0), -0.5, 0.25),
    ):
        z = prior.sample(n, seed)[:, 0]
        assert abs(z.mean() - mean) < 5 * math.sqrt(var / n)
        assert abs(z.var() - var) < 5 * var * math.sqrt(2.0 / n) * 2


@pytest.mark.parametrize(
    "prior",
    [IsotropicGaussian(0.8, 1), IsotropicGaussian(1.3, 2), UniformBox([[0, 2], [-1, 1]]), TruncatedExponential(3.0)],
    ids=lambda p: f"{p.kind}{p.latent_dim}",
)
def test_prior_integrates_to_one(prior):
    if prior.latent_dim == 1:
        val, _ = integrate.quad(lambda z: math.exp(prior.log_density([z])) if np.isfinite(prior.log_density([z])) else 0.0,
                                -12, 12, points=[0.0], limit=400)
    else:
        val, _ = integrate.dblquad(lambda y, x: float(prior.density([x, y])), -8, 8, -8, 8, epsabs=1e-9)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_prior_gradient():
    prior = IsotropicGaussian(2.0, 2)
    np.testing.assert_allclose(prior.grad_log_density([1.0, -2.0]), [-0.25, 0.5])
    np.testing.assert_allclose(TruncatedExponential(3.0).grad_log_density([-1.0]), [3.0])


def test_central_interval_and_mass_region():
    prior = IsotropicGaussian(1.0, 1)
    lo, hi = prior.central_interval(0.95)
    assert hi == pytest.approx(1.959964, abs=1e-6) and lo == pytest.approx(-hi)
    z = prior.sample(20_000, 0)
    assert prior.in_mass_region(z, 0.99).mean() == pytest.approx(0.99, abs=0.005)


def test_prior_roundtrip():
    for prior in (IsotropicGaussian(0.5, 2), UniformBox([[0, 1]]), TruncatedExponential(4.0)):
        again = prior_from_dict(prior.to_dict())
        assert again.to_dict() == prior.to_dict()
