"""Gradient-based maximization of the embedding objective.

The default schedule runs Adam and then a short tail of gradient ascent with
backtracking, whose accepted iterates never decrease the objective. Restarts
are independent; the best final objective wins and exact ties go to the lower
restart index.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import EmbeddingModel
from .errors import IterateInvalid, OptimizationFailed
from .models import DensityModel, PriorModel
from .objective import IntegrationConfig, estimate_objective

METHODS = ("adam", "gradient-ascent-with-backtracking")
MAX_HALVINGS = 30
ARMIJO = 1e-4

ObjectiveFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class OptimizeConfig:
    method: str = "adam"
    step_size: float = 1e-2
    max_iterations: int = 2000
    tail_iterations: int = 200
    grad_tol: float = 1e-6
    change_tol: float = 1e-13
    seed: int = 0
    restarts: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    repulsion: float = 0.0
    repulsion_length: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not (self.grad_tol > 0 and self.change_tol > 0):
            raise ValueError("convergence thresholds must be > 0")
        if self.restarts < 1 or self.max_iterations < 0 or self.tail_iterations < 0:
            raise ValueError("restarts must be >= 1 and iteration counts >= 0")


@dataclass
class OptimizeTrace:
    values: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    final_theta: np.ndarray | None = None
    wall_clock: float = 0.0
    restart: int = 0
    status: str = ""
    failure: str | None = None

    def record(self, value: float, grad_norm: float, accepted: bool, phase: str) -> None:
        self.values.append(float(value))
        self.grad_norms.append(float(grad_norm))
        self.accepted.append(bool(accepted))
        self.phases.append(phase)

    @property
    def final_value(self) -> float:
        """Objective at ``final_theta`` (the last accepted iterate)."""
        if self.failure is not None:
            return float("-inf")
        for v, a in zip(reversed(self.values), reversed(self.accepted)):
            if a:
                return v
        return float("-inf")

    @property
    def final_grad_norm(self) -> float:
        for g, a in zip(reversed(self.grad_norms), reversed(self.accepted)):
            if a:
                return g
        return float("inf")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration [count]", "phase [label]", "J [nats]", "grad_norm [nats/param]", "accepted [bool]"])
            for k, (v, g, a, ph) in enumerate(zip(self.values, self.grad_norms, self.accepted, self.phases)):
                w.writerow([k, ph, repr(v), repr(g), int(a)])

    def summary(self) -> dict:
        return {
            "restart": self.restart,
            "final_J": self.final_value,
            "final_grad_norm": self.final_grad_norm,
            "iterations": len(self.values),
            "status": self.status,
            "failure": self.failure,
        }


def _try(fun: ObjectiveFn, theta: np.ndarray):
    try:
        return fun(theta)
    except IterateInvalid:
        return None


def _adam(fun, theta, value, grad, config: OptimizeConfig, trace: OptimizeTrace):
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, config.max_iterations + 1):
        if np.linalg.norm(grad) < config.grad_tol:
            trace.status = "converged (gradient norm)"
            return theta, value, grad, True
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        step = (m / (1 - config.beta1**t)) / (np.sqrt(v / (1 - config.beta2**t)) + config.eps)
        lr = config.step_size
        for _ in range(MAX_HALVINGS + 1):
            out = _try(fun, theta + lr * step)
            if out is not None:
                break
            lr *= 0.5
        else:
            trace.status = "adam step invalid after repeated halving"
            return theta, value, grad, False
        theta = theta + lr * step
        value, grad = out
        trace.record(value, np.linalg.norm(grad), True, "adam")
    return theta, value, grad, False


def _backtracking(fun, theta, value, grad, iterations: int, alpha: float,
                  config: OptimizeConfig, trace: OptimizeTrace):
    for _ in range(iterations):
        gn2 = float(grad @ grad)
        if np.sqrt(gn2) < config.grad_tol:
            trace.status = "converged (gradient norm)"
            return theta, value, grad
        for _ in range(MAX_HALVINGS + 1):
            out = _try(fun, theta + alpha * grad)
            if out is not None and out[0] >= value + ARMIJO * alpha * gn2:
                break
            if out is not None:
                trace.record(out[0], np.linalg.norm(out[1]), False, "tail")
            alpha *= 0.5
        else:
            trace.status = "line search exhausted"
            return theta, value, grad
        change = out[0] - value
        theta = theta + alpha * grad
        value, grad = out
        trace.record(value, np.linalg.norm(grad), True, "tail")
        alpha *= 2.0
        if change < config.change_tol * (1.0 + abs(value)):
            trace.status = "converged (objective change)"
            return theta, value, grad
    trace.status = trace.status or "iteration limit"
    return theta, value, grad


def maximize(fun: ObjectiveFn, theta0, config: OptimizeConfig, restart: int = 0) -> OptimizeTrace:
    """Maximize ``fun`` (returning value and gradient) from ``theta0``.

    ``fun`` may raise ``IterateInvalid``; steps into such points are halved.
    A failure at ``theta0`` itself is recorded in ``trace.failure``.
    """
    start = time.perf_counter()
    trace = OptimizeTrace(restart=restart)
    theta = np.array(theta0, dtype=float)
    try:
        value, grad = fun(theta)
    except IterateInvalid as exc:
        trace.failure = f"restart {restart}: invalid initial iterate: {exc}"
        trace.status = "failed"
        trace.final_theta = theta
        trace.wall_clock = time.perf_counter() - start
        return trace
    trace.record(value, np.linalg.norm(grad), True, "init")
    if config.method == "adam":
        theta, value, grad, done = _adam(fun, theta, value, grad, config, trace)
        if not done:
            trace.status = ""
            theta, value, grad = _backtracking(
                fun, theta, value, grad, config.tail_iterations, config.step_size, config, trace
            )
    else:
        theta, value, grad = _backtracking(
            fun, theta, value, grad, config.max_iterations, config.step_size, config, trace
        )
    trace.final_theta = theta
    trace.wall_clock = time.perf_counter() - start
    return trace


def _workers(n: int) -> int:
    try:
        cap = int(os.environ.get("VAREMBED_WORKERS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n))


def objective_function(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel,
                       scheme: IntegrationConfig | None = None, repulsion: float = 0.0,
                       repulsion_length: float = 0.1) -> ObjectiveFn:
    """``theta -> (value, gradient)``; with repulsion the value includes the penalty."""

    def fun(theta):
        est = estimate_objective(embedding.with_theta(theta), prior, density, scheme, want_gradient=True,
                                 repulsion=repulsion, repulsion_length=repulsion_length)
        return est.value - repulsion * est.penalty, est.gradient

    return fun


def run_restarts(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel,
                 config: OptimizeConfig, scheme: IntegrationConfig | None = None) -> list[OptimizeTrace]:
    """One trace per restart. Restart 0 starts from ``embedding``'s own
    parameters; restart ``k > 0`` from ``embedding.initialized(seed + k)``."""
    fun = objective_function(embedding, prior, density, scheme, config.repulsion, config.repulsion_length)
    starts = [embedding.theta] + [embedding.initialized(config.seed + k).theta for k in range(1, config.restarts)]
    jobs = list(enumerate(starts))
    n = _workers(len(jobs))
    if n == 1:
        return [maximize(fun, th, config, k) for k, th in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda job: maximize(fun, job[1], config, job[0]), jobs))


def best_trace(traces: list[OptimizeTrace]) -> OptimizeTrace:
    ok = [t for t in traces if t.failure is None]
    if not ok:
        raise OptimizationFailed("all restarts failed at initialization", [t.failure for t in traces])
    return max(ok, key=lambda t: (t.final_value, -t.restart))


def optimize(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel,
             config: OptimizeConfig | None = None,
             scheme: IntegrationConfig | None = None) -> tuple[EmbeddingModel, OptimizeTrace]:
    """Fit ``embedding`` and return the best restart with its trace."""
    config = config or OptimizeConfig()
    traces = run_restarts(embedding, prior, density, config, scheme)
    best = best_trace(traces)
    return embedding.with_theta(best.final_theta), best


def multi_restart_stats(traces: list[OptimizeTrace]) -> dict:
    if not traces:
        raise ValueError("need at least one trace")
    finals = [t.final_value for t in traces]
    ok = [v for v in finals if np.isfinite(v)]
    return {
        "best_J": max(finals),
        "spread": (max(ok) - min(ok)) if ok else float("nan"),
        "per_restart_J": finals,
    }
