import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varembed.embedding import Linear
from varembed.errors import DegenerateSpectrumError, RankDeficientError
from varembed.models import IsotropicGaussian, MultivariateGaussian
from varembed.numerics import random_orthogonal, random_spd
from varembed.objective import IntegrationConfig, estimate_objective
from varembed.pca import (
    closed_form_objective,
    closed_form_solution,
    fixed_point_residual,
    optimal_phi_part,
    principal_angles,
)


def test_diag41_solution():
    sol = closed_form_solution(np.diag([4.0, 1.0]), 1)
    np.testing.assert_allclose(np.abs(sol.A), [[2.0], [0.0]], atol=1e-15)
    assert closed_form_objective(np.diag([4.0, 1.0]), 1) == pytest.approx(-0.918939, abs=1e-6)


def test_sigma0_scales_solution():
    sol = closed_form_solution(np.diag([9.0, 4.0, 1.0]), 2, sigma0=2.0)
    np.testing.assert_allclose(sol.singular_values(), [1.5, 1.0], atol=1e-14)


def test_tie_rejected():
    with pytest.raises(DegenerateSpectrumError, match="multiple solutions"):
        closed_form_solution(np.eye(2), 1)


def test_tie_below_cut_is_fine():
    sol = closed_form_solution(np.diag([3.0, 1.0, 1.0]), 1)
    assert sol.A.shape == (3, 1)


def test_invalid_d():
    with pytest.raises(ValueError):
        closed_form_solution(np.eye(2) * [1.0, 2.0], 3)


def test_optimal_phi_part():
    assert optimal_phi_part([4.0]) == pytest.approx(-0.5 + 0.5 * math.log(4.0), abs=1e-15)
    assert optimal_phi_part([4.0], sigma0=2.0) == pytest.approx(-0.5, abs=1e-15)


def test_full_dimension_objective_zero():
    Sigma = random_spd(2, np.random.default_rng(2))
    assert closed_form_objective(Sigma, 2) == 0.0
    sol = closed_form_solution(Sigma, 2)
    J = estimate_objective(Linear.from_matrix(sol.A), IsotropicGaussian(1.0, 2),
                           MultivariateGaussian(np.zeros(2), Sigma), IntegrationConfig(order=8)).value
    assert abs(J) < 1e-12


@given(st.integers(0, 10_000), st.integers(3, 6), st.floats(0.3, 3.0))
@settings(max_examples=25, deadline=None)
def test_closed_form_properties(seed, D, sigma0):
    rng = np.random.default_rng(seed)
    Sigma = random_spd(D, rng)
    d = int(rng.integers(1, D))
    sol = closed_form_solution(Sigma, d, sigma0, gauge=random_orthogonal(d, rng))
    assert fixed_point_residual(sol.A, Sigma, sigma0) < 1e-10
    np.testing.assert_allclose(sigma0 * sol.singular_values(), np.sqrt(sol.eigenvalues[:d]), rtol=1e-10)
    assert principal_angles(sol.A, sol.eigenvectors[:, :d]).max() < 1e-7


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_closed_form_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    Sigma = random_spd(4, rng)
    d = int(rng.integers(1, 3))
    sigma0 = float(rng.uniform(0.5, 2.0))
    sol = closed_form_solution(Sigma, d, sigma0)
    J = estimate_objective(Linear.from_matrix(sol.A), IsotropicGaussian(sigma0, d),
                           MultivariateGaussian(np.zeros(4), Sigma), IntegrationConfig(order=12)).value
    assert J == pytest.approx(closed_form_objective(Sigma, d), abs=1e-6)


def test_fixed_point_residual_nonzero_off_optimum():
    assert fixed_point_residual([[1.0], [1.0]], np.diag([4.0, 1.0])) > 0.1


def test_principal_angles_known():
    a = np.array([[1.0], [0.0]])
    b = np.array([[math.cos(0.3)], [math.sin(0.3)]])
    assert principal_angles(a, b)[0] == pytest.approx(0.3, abs=1e-12)


def test_principal_angles_rank_check():
    with pytest.raises(RankDeficientError):
        principal_angles(np.zeros((3, 1)), np.eye(3)[:, :1])


def test_solution_serializes():
    d = closed_form_solution(np.diag([4.0, 1.0]), 1).to_dict()
    assert d["eigenvalues"] == [4.0, 1.0] and d["sigma0"] == 1.0
