import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from varembed.dynamics import (
    OdeState,
    compare_score_limit,
    el_ode_rhs,
    integrate_el,
    reparameterized_flow,
    score_following_flow,
    score_following_rhs,
)
from varembed.errors import CriticalPointError, TurningPoint
from varembed.models import (
    GaussianMixture,
    IsotropicGaussian,
    MultivariateGaussian,
    SmoothedUniformBall,
    TruncatedExponential,
    UniformBox,
)

FLAT = SmoothedUniformBall([0.0, 0.0], 50.0)
STD2 = MultivariateGaussian([0.0, 0.0], np.eye(2))
MIX3 = GaussianMixture.equal([[0, 0], [3, 1], [1, 3]], 0.04)


def test_zero_score_straight_line():
    p = np.array([0.5, -2.0])
    traj = integrate_el(OdeState(0.0, [1.0, 1.0], p), (0.0, 1.0), 7, UniformBox([[0.0, 1.0]]), FLAT)
    expected = np.array([1.0, 1.0]) + traj.z[:, None] * p / (p @ p)
    np.testing.assert_allclose(traj.phi, expected, atol=1e-14)
    np.testing.assert_allclose(traj.p, np.tile(p, (8, 1)), atol=0)


def test_exponential_prior_rhs():
    state = OdeState(-0.2, [0.5, 0.5], [0.3, -0.1])
    dphi, dp = el_ode_rhs(state, TruncatedExponential(4.0), STD2)
    np.testing.assert_allclose(dp, -state.phi - 4.0 * state.p, atol=1e-15)
    np.testing.assert_allclose(dphi, state.p / 0.1, atol=1e-14)


def test_turning_point_raised():
    with pytest.raises(TurningPoint):
        el_ode_rhs(OdeState(0.0, [0.0, 0.0], [0.0, 0.0]), IsotropicGaussian(1.0, 1), STD2)


def test_outside_support_raised():
    with pytest.raises(ValueError, match="support"):
        el_ode_rhs(OdeState(0.5, [1.0, 0.0], [1.0, 0.0]), TruncatedExponential(2.0), STD2)


def test_turning_point_halts_integration():
    # moving outward against the score: the momentum decays to zero
    dens = MultivariateGaussian([0.0], [[1.0]])
    traj = integrate_el(OdeState(0.0, [1.0], [0.3]), (0.0, 1.0), 2000, UniformBox([[0.0, 1.0]]), dens)
    assert traj.halted and "momentum" in traj.halt_reason
    assert traj.z[-1] < 1.0


def test_gaussian_axis_matches_dense_oracle():
    prior = IsotropicGaussian(1.0, 1)
    phi0, p0 = np.array([0.5, 0.0]), np.array([1.2, 0.0])
    traj = integrate_el(OdeState(0.0, phi0, p0), (0.0, 0.8), None, prior, STD2)

    def rhs(z, y):
        x, p = y
        return [1.0 / p, -x + z * p]

    ref = solve_ivp(rhs, (0.0, 0.8), [phi0[0], p0[0]], rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose([traj.phi[-1, 0], traj.p[-1, 0]], ref.y[:, -1], atol=1e-9)
    assert np.all(traj.phi[:, 1] == 0.0)


def _endpoint(steps):
    prior = IsotropicGaussian(1.0, 1)
    dens = GaussianMixture.equal([[0, 0], [1.5, 0.5], [0.5, 1.5]], 0.5)
    traj = integrate_el(OdeState(0.0, [1.0, 0.5], [1.5, 0.5]), (0.0, 1.0), steps, prior, dens)
    return np.concatenate([traj.phi[-1], traj.p[-1]])


def test_rk4_convergence_order():
    ends = [_endpoint(n) for n in (10, 20, 40, 80)]
    diffs = [np.linalg.norm(a - b) for a, b in zip(ends, ends[1:])]
    ratios = [a / b for a, b in zip(diffs, diffs[1:])]
    assert all(8 <= r <= 32 for r in ratios), ratios
    assert all(math.log2(r) >= 3.5 for r in ratios)


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_energy_conserved_along_trajectories(seed):
    rng = np.random.default_rng(seed)
    prior = IsotropicGaussian(1.0, 1)
    dens = GaussianMixture.equal([[0, 0], [1.5, 0.5], [0.5, 1.5]], 0.5)
    phi0 = rng.uniform(-1, 2, 2)
    p0 = rng.standard_normal(2)
    p0 *= rng.uniform(0.5, 2.0) / np.linalg.norm(p0)
    traj = integrate_el(OdeState(0.0, phi0, p0), (0.0, 0.5), None, prior, dens)
    E = traj.energy(prior, dens)
    assert np.ptp(E) < 1e-4


def test_trajectory_csv(tmp_path):
    prior = IsotropicGaussian(1.0, 1)
    traj = integrate_el(OdeState(0.0, [1.0, 0.0], [1.0, 0.0]), (0.0, 0.01), 4, prior, STD2)
    traj.to_csv(tmp_path / "t.csv", prior, STD2)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["z [latent]", "phi0 [ambient]", "phi1 [ambient]", "p0 [1/ambient]", "p1 [1/ambient]",
                       "energy [nats]"]
    assert len(rows) == 6


def test_span_must_start_at_state():
    with pytest.raises(ValueError):
        integrate_el(OdeState(0.0, [1.0], [1.0]), (0.5, 1.0), 10, IsotropicGaussian(1.0, 1),
                     MultivariateGaussian([0.0], [[1.0]]))


# -- score-following limit ---------------------------------------------------------


def test_score_following_rhs_value():
    np.testing.assert_allclose(score_following_rhs([2.0, 0.0], 3.0, STD2), [-1.5, 0.0], atol=1e-15)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 100))
@settings(max_examples=30, deadline=None)
def test_score_following_parallel_to_score(x, y, gamma):
    phi = np.array([x, y])
    s = MIX3.score(phi)
    if np.linalg.norm(s) < 1e-6:
        return
    v = score_following_rhs(phi, gamma, MIX3)
    cos = v @ s / (np.linalg.norm(v) * np.linalg.norm(s))
    assert cos == pytest.approx(1.0, abs=1e-14)


def test_score_following_critical_point():
    with pytest.raises(CriticalPointError):
        score_following_rhs([0.0, 0.0], 1.0, STD2)
    with pytest.raises(ValueError):
        score_following_rhs([1.0, 0.0], 0.0, STD2)


def test_score_following_flow_halts_at_mode():
    # 1D N(0,1): phi' = -gamma/phi reaches the mode in finite z
    dens = MultivariateGaussian([0.0], [[1.0]])
    traj = score_following_flow([1.0], (0.0, 1.0), 1000, 1.0, dens)
    assert traj.halted


def test_gamma100_limit():
    cmp = compare_score_limit([1.5, -1.5], 100.0, (-0.1, 0.0), MIX3)
    assert cmp.summary["max_momentum_gap"] < 0.05
    assert cmp.summary["endpoint_relative_gap"] < 0.05
    assert cmp.summary["el_halt"] is None


def test_limit_csv(tmp_path):
    cmp = compare_score_limit([1.5, -1.5], 10.0, (-0.2, 0.0), MIX3, steps=50)
    cmp.to_csv(tmp_path / "l.csv")
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows[0][0] == "z [latent]" and len(rows) == 52


# -- reparameterized flow ----------------------------------------------------------


@pytest.mark.parametrize("sigma2", [0.5, 1.0, 2.0])
def test_reparameterized_flow_analytic(sigma2):
    dens = MultivariateGaussian([0.0], [[sigma2]])
    traj = reparameterized_flow([1.3], (0.0, 1.0), 200, dens)
    assert traj.phi[-1, 0] == pytest.approx(1.3 * math.exp(-1.0 / sigma2), abs=1e-6)


def test_reparameterized_flow_mode_fixed():
    traj = reparameterized_flow([3.0, 1.0], (0.0, 2.0), 100, MIX3)
    np.testing.assert_allclose(traj.phi[-1], [3.0, 1.0], atol=1e-12)


def test_reparameterized_flow_ascends():
    traj = reparameterized_flow([1.5, -1.0], (0.0, 3.0), 600, MIX3)
    logp = MIX3.log_density(traj.phi)
    assert np.all(np.diff(logp) >= -1e-12)
