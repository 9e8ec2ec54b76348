import csv
import math

import numpy as np
import pytest

from varembed.embedding import Linear, make_embedding
from varembed.errors import IterateInvalid, OptimizationFailed
from varembed.models import GaussianMixture, IsotropicGaussian, MultivariateGaussian
from varembed.objective import IntegrationConfig
from varembed.optimizer import (
    OptimizeConfig,
    OptimizeTrace,
    best_trace,
    maximize,
    multi_restart_stats,
    optimize,
    run_restarts,
)
from varembed.pca import fixed_point_residual, principal_angles

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
GH16 = IntegrationConfig(order=16)
DIAG41 = MultivariateGaussian([0, 0], np.diag([4.0, 1.0]))

A_TOY = np.array([[3.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
C_TOY = np.array([1.0, -2.0, 0.5])


def quadratic(theta):
    r = theta - C_TOY
    return -0.5 * r @ A_TOY @ r, -A_TOY @ r


@pytest.mark.parametrize("method", ["adam", "gradient-ascent-with-backtracking"])
def test_quadratic_toy(method):
    cfg = OptimizeConfig(method=method, step_size=0.05, max_iterations=5000, grad_tol=1e-9, change_tol=1e-30)
    trace = maximize(quadratic, np.zeros(3), cfg)
    np.testing.assert_allclose(trace.final_theta, C_TOY, atol=1e-6)
    assert trace.final_value == pytest.approx(0.0, abs=1e-12)


def test_backtracking_monotone():
    cfg = OptimizeConfig(method="gradient-ascent-with-backtracking", step_size=1.0, max_iterations=200)
    trace = maximize(quadratic, np.zeros(3), cfg)
    acc = [v for v, a in zip(trace.values, trace.accepted) if a]
    assert all(b >= a for a, b in zip(acc, acc[1:]))
    assert not all(trace.accepted)  # step 1.0 overshoots at first


def test_invalid_region_is_avoided():
    def fun(theta):
        if theta[0] > 0.9:
            raise IterateInvalid("outside the valid region")
        return -(theta[0] - 2.0) ** 2, np.array([-2 * (theta[0] - 2.0)])

    for method in ("adam", "gradient-ascent-with-backtracking"):
        trace = maximize(fun, np.zeros(1), OptimizeConfig(method=method, step_size=0.5, max_iterations=300))
        assert trace.failure is None
        assert 0.8 < trace.final_theta[0] <= 0.9


def test_invalid_start_reported():
    def fun(theta):
        raise IterateInvalid("rank-deficient")

    trace = maximize(fun, np.zeros(2), OptimizeConfig())
    assert trace.failure and "rank-deficient" in trace.failure
    with pytest.raises(OptimizationFailed) as info:
        best_trace([trace, trace])
    assert len(info.value.causes) == 2


def test_config_validation():
    for bad in ({"method": "newton"}, {"step_size": 0.0}, {"grad_tol": -1.0}, {"restarts": 0}):
        with pytest.raises(ValueError):
            OptimizeConfig(**bad)


def test_trace_csv(tmp_path):
    trace = maximize(quadratic, np.zeros(3), OptimizeConfig(max_iterations=5, tail_iterations=2))
    trace.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["iteration [count]", "phase [label]", "J [nats]", "grad_norm [nats/param]", "accepted [bool]"]
    assert len(rows) == len(trace.values) + 1


def test_tie_break_lower_restart():
    a, b = OptimizeTrace(restart=0), OptimizeTrace(restart=1)
    for t in (a, b):
        t.record(1.0, 0.0, True, "adam")
    assert best_trace([b, a]).restart == 0


def test_pca_recovery():
    emb = make_embedding("linear", 1, 2, seed=0)
    fitted, trace = optimize(emb, IsotropicGaussian(1.0, 1), DIAG41, OptimizeConfig(restarts=5), GH16)
    assert trace.final_value == pytest.approx(-HALF_LOG_2PI, abs=1e-3)
    A = fitted.params["A"]
    assert principal_angles(A, [[1.0], [0.0]])[0] < 0.02
    assert fixed_point_residual(A, np.diag([4.0, 1.0])) < 1e-3


def test_pca_restart_spread():
    emb = make_embedding("linear", 1, 2, seed=0)
    traces = run_restarts(emb, IsotropicGaussian(1.0, 1), DIAG41, OptimizeConfig(restarts=5), GH16)
    stats = multi_restart_stats(traces)
    assert stats["spread"] < 1e-3 and len(stats["per_restart_J"]) == 5


def test_isotropic_restarts_same_value():
    emb = make_embedding("linear", 1, 2, seed=0)
    cfg = OptimizeConfig(restarts=3, max_iterations=800)
    traces = run_restarts(emb, IsotropicGaussian(1.0, 1), MultivariateGaussian([0, 0], np.eye(2)), cfg, GH16)
    assert multi_restart_stats(traces)["spread"] < 1e-3
    cols = [t.final_theta[:2] / np.linalg.norm(t.final_theta[:2]) for t in traces]
    assert max(abs(abs(cols[0] @ c) - 1.0) for c in cols) > 1e-3  # directions differ


def test_identical_traces_zero_spread():
    t = maximize(quadratic, np.zeros(3), OptimizeConfig(max_iterations=50, tail_iterations=0))
    assert multi_restart_stats([t, t])["spread"] == 0.0
    with pytest.raises(ValueError):
        multi_restart_stats([])


def test_determinism():
    emb = make_embedding("perceptron", 1, 2, seed=4, hidden=(6,))
    mix = GaussianMixture.equal([[0, 0], [1, 0.5], [2, 1]], 0.1)
    cfg = OptimizeConfig(max_iterations=40, tail_iterations=10, restarts=2)
    mc = IntegrationConfig("monte-carlo", samples=256, seed=1)
    a = run_restarts(emb, IsotropicGaussian(1.0, 1), mix, cfg, mc)
    b = run_restarts(emb, IsotropicGaussian(1.0, 1), mix, cfg, mc)
    for ta, tb in zip(a, b):
        assert ta.values == tb.values and np.array_equal(ta.final_theta, tb.final_theta)


def test_restart_zero_uses_given_parameters():
    emb = Linear.from_matrix([[2.0], [0.0]])
    traces = run_restarts(emb, IsotropicGaussian(1.0, 1), DIAG41, OptimizeConfig(max_iterations=0, tail_iterations=0), GH16)
    assert traces[0].values[0] == pytest.approx(-HALF_LOG_2PI, abs=1e-12)


def test_perceptron_beats_linear_on_line_mixture():
    u = np.array([1.0, 0.5]) / math.sqrt(1.25)
    mix = GaussianMixture.equal(np.outer(np.arange(8) - 3.5, u), 0.04)
    prior = IsotropicGaussian(1.0, 1)
    mc = IntegrationConfig("monte-carlo", samples=4096, seed=0)
    _, lin = optimize(make_embedding("linear", 1, 2, seed=0), prior, mix, OptimizeConfig(), mc)
    mlp = make_embedding("perceptron", 1, 2, seed=0, hidden=(8,), skip=False)
    _, net = optimize(mlp, prior, mix, OptimizeConfig(max_iterations=300, tail_iterations=0), mc)
    assert net.final_value > lin.final_value
