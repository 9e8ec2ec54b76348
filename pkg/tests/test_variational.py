import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from varembed.embedding import FunctionEmbedding, Linear, make_embedding
from varembed.errors import RankDeficientError
from varembed.models import IsotropicGaussian, MultivariateGaussian, SmoothedUniformBall, UniformBox
from varembed.numerics import random_orthogonal, random_spd
from varembed.pca import closed_form_solution
from varembed.variational import (
    angular_momentum_1d,
    canonical_momentum_divergence,
    el_residual,
    embedding_energy,
    energy_conservation_report,
    mass_region_samples,
    stress_energy,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
DIAG41 = MultivariateGaussian([0, 0], np.diag([4.0, 1.0]))


def _pca_fit():
    return Linear.from_matrix(closed_form_solution(np.diag([4.0, 1.0]), 1).A)


def _curve(fn, dfn):
    return FunctionEmbedding(1, 2, fn=lambda z: fn(z[:, 0]), jac=lambda z: dfn(z[:, 0])[:, :, None])


# -- EL residual ----------------------------------------------------------------


@pytest.mark.parametrize("z", [-2.0, -0.3, 0.0, 0.7, 2.5])
def test_el_residual_vanishes_at_pca(z):
    r = el_residual(_pca_fit(), IsotropicGaussian(1.0, 1), DIAG41, [z])
    assert r.absolute < 1e-6


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_el_residual_random_closed_forms(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(2, 5))
    d = int(rng.integers(1, D))
    sigma0 = float(rng.uniform(0.5, 2.0))
    Sigma = random_spd(D, rng)
    sol = closed_form_solution(Sigma, d, sigma0, gauge=random_orthogonal(d, rng))
    prior = IsotropicGaussian(sigma0, d)
    dens = MultivariateGaussian(np.zeros(D), Sigma)
    for z in prior.sample(3, seed):
        assert el_residual(Linear.from_matrix(sol.A), prior, dens, z).relative < 1e-6


def test_el_residual_uniform_region_linear():
    ball = SmoothedUniformBall([0.0, 0.0], 3.0)
    emb = Linear.from_matrix([[0.8], [-0.5]])
    for z in np.linspace(0.05, 0.95, 7):
        assert el_residual(emb, UniformBox([[0.0, 1.0]]), ball, [z]).absolute < 1e-12


def test_el_residual_random_perceptron_large():
    emb = make_embedding("perceptron", 1, 2, seed=3, hidden=(8,))
    r = [el_residual(emb, IsotropicGaussian(1.0, 1), DIAG41, [z]).absolute for z in (-1.0, 0.0, 1.0)]
    assert max(r) > 1e-3


def test_el_residual_names_stencil_point():
    emb = _curve(lambda z: np.c_[z**3, z**3], lambda z: np.c_[3 * z**2, 3 * z**2])
    with pytest.raises(RankDeficientError, match="stencil point"):
        el_residual(emb, IsotropicGaussian(1.0, 1), DIAG41, [0.0], h=1e-3)


# -- energy ------------------------------------------------------------------------


def test_energy_identity_zero():
    emb = Linear.from_matrix(np.eye(2))
    E = embedding_energy(emb, IsotropicGaussian(1.0, 2), MultivariateGaussian([0, 0], np.eye(2)),
                         np.random.default_rng(0).standard_normal((10, 2)))
    np.testing.assert_allclose(E, 0.0, atol=1e-14)


def test_energy_pca_constant():
    z = np.linspace(-3, 3, 32)[:, None]
    E = embedding_energy(_pca_fit(), IsotropicGaussian(1.0, 1), DIAG41, z)
    np.testing.assert_allclose(E, HALF_LOG_2PI, atol=1e-12)
    assert embedding_energy(_pca_fit(), IsotropicGaussian(1.0, 1), DIAG41, [0.4]) == pytest.approx(HALF_LOG_2PI)


def test_energy_random_varies():
    emb = make_embedding("perceptron", 1, 2, seed=0, hidden=(8,))
    E = embedding_energy(emb, IsotropicGaussian(1.0, 1), DIAG41, np.linspace(-2, 2, 32)[:, None])
    assert np.std(E) > 1e-2


def test_conservation_report_pca():
    trace = energy_conservation_report(_pca_fit(), IsotropicGaussian(1.0, 1), DIAG41, n=256, seed=0)
    assert trace.summary["energy"]["relative_std"] < 1e-2
    assert trace.summary["energy"]["mean"] == pytest.approx(HALF_LOG_2PI, abs=1e-12)
    assert trace.samples.shape == (256, 1) and trace.momentum.shape == (256, 1, 2)


def test_conservation_report_random_init():
    emb = make_embedding("perceptron", 1, 2, seed=1)
    trace = energy_conservation_report(emb, IsotropicGaussian(1.0, 1), DIAG41, n=128)
    assert trace.summary["energy"]["relative_std"] > 1e-1


def test_conservation_csv(tmp_path):
    emb = Linear.from_matrix([[1.0], [0.5]])
    trace = energy_conservation_report(emb, IsotropicGaussian(1.0, 1), DIAG41, n=16)
    trace.to_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["z0 [latent]", "E [nats]", "momentum_0_0 [density/ambient]",
                       "momentum_0_1 [density/ambient]", "L [density*ambient]"]
    assert len(rows) == 17


def test_mass_region_samples():
    prior = IsotropicGaussian(1.0, 1)
    z = mass_region_samples(prior, 500, 3, 0.99)
    assert z.shape == (500, 1) and np.all(np.abs(z) <= stats.norm.ppf(0.995))


# -- momentum ------------------------------------------------------------------------


def _cdf_map():
    return FunctionEmbedding(1, 1, fn=lambda z: stats.norm.cdf(z), jac=lambda z: stats.norm.pdf(z)[:, :, None])


def test_cdf_map_momentum_conserved():
    emb, prior = _cdf_map(), IsotropicGaussian(1.0, 1)
    div = [canonical_momentum_divergence(emb, prior, 0, [z]) for z in np.linspace(-2.5, 2.5, 101)]
    assert max(map(abs, div)) < 1e-6


def test_linear_uniform_momentum_zero():
    emb = Linear.from_matrix([[0.7], [0.2]])
    for z in (0.1, 0.5, 0.9):
        assert canonical_momentum_divergence(emb, UniformBox([[0.0, 1.0]]), 1, [z]) == 0.0


def test_gaussian_prior_momentum_nonzero():
    emb = Linear.from_matrix([[2.0], [0.0]])
    assert abs(canonical_momentum_divergence(emb, IsotropicGaussian(1.0, 1), 0, [1.0])) > 1e-2


def test_momentum_direction_validated():
    with pytest.raises(ValueError):
        canonical_momentum_divergence(_pca_fit(), IsotropicGaussian(1.0, 1), 2, [0.0])


# -- angular momentum ---------------------------------------------------------------------


def test_circle_angular_momentum_constant():
    emb = _curve(lambda z: np.c_[np.cos(z), np.sin(z)], lambda z: np.c_[-np.sin(z), np.cos(z)])
    prior = UniformBox([[0.0, 2 * np.pi]])
    L = [angular_momentum_1d(emb, prior, [z]) for z in np.linspace(0.1, 6.1, 25)]
    assert np.ptp(L) <= 1e-12
    assert L[0] == pytest.approx(-1 / (2 * np.pi), abs=1e-15)


def test_radial_line_zero():
    emb = Linear.from_matrix([[1.0], [2.0]])
    for z in (-1.0, 0.5, 2.0):
        assert angular_momentum_1d(emb, IsotropicGaussian(1.0, 1), [z]) == 0.0


def test_angular_zero_velocity():
    emb = _curve(lambda z: np.c_[z**2, z], lambda z: np.c_[2 * z, 0 * z])
    with pytest.raises(RankDeficientError):
        angular_momentum_1d(emb, IsotropicGaussian(1.0, 1), [0.0])


# -- stress-energy -------------------------------------------------------------------------


def test_stress_energy_identity():
    prior = IsotropicGaussian(1.0, 2)
    emb = Linear.from_matrix(np.eye(2))
    z = [0.3, -0.8]
    T = stress_energy(emb, prior, MultivariateGaussian([0, 0], np.eye(2)), z)
    np.testing.assert_allclose(T, prior.density(z) * np.eye(2), atol=1e-15)


def test_stress_energy_diagonal():
    emb = make_embedding("perceptron", 2, 3, seed=2)
    T = stress_energy(emb, IsotropicGaussian(1.0, 2), MultivariateGaussian(np.zeros(3), np.eye(3)), [0.1, 0.2])
    assert T[0, 1] == 0.0 and T[1, 0] == 0.0 and T[0, 0] == T[1, 1]


def test_stress_energy_uniform_prior_constant():
    # z -> inverse normal cdf pushes U(0, 1) onto N(0, 1) exactly, so the energy is 0
    emb = FunctionEmbedding(1, 1, fn=lambda z: stats.norm.ppf(z),
                            jac=lambda z: (1 / stats.norm.pdf(stats.norm.ppf(z)))[:, :, None])
    prior = UniformBox([[0.0, 1.0]])
    dens = MultivariateGaussian([0.0], [[1.0]])
    diag = [stress_energy(emb, prior, dens, [z])[0, 0] for z in np.linspace(0.01, 0.99, 25)]
    assert np.ptp(diag) < 1e-3
    assert diag[0] == pytest.approx(1.0, abs=1e-12)
