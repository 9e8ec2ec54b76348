"""Quadrature rules for expectations under the latent priors.

All rules carry probability weights (nonnegative, summing to one), so an
expectation is always ``weights @ f(nodes)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e, laguerre, legendre

MAX_ORDER = 64
MAX_TENSOR_DIM = 3


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] < 1 or nodes.shape[0] != weights.shape[0]:
            raise ValueError("node/weight count mismatch or empty rule")
        if np.any(weights < 0):
            raise ValueError("quadrature weights must be nonnegative")
        if abs(float(np.sum(weights)) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {np.sum(weights)!r}, expected 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def expect(self, values) -> np.ndarray:
        """Weighted sum over the leading axis of ``values``."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))


def _normalize(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    w = w / np.sum(w)
    # one correction pass so the sum is 1 to the last bit that matters
    return w / np.sum(w)


def _tensor(nodes_1d: list[np.ndarray], weights_1d: list[np.ndarray]) -> QuadratureRule:
    pts = np.array(list(itertools.product(*nodes_1d)), dtype=float)
    wts = np.array([np.prod(c) for c in itertools.product(*weights_1d)], dtype=float)
    return QuadratureRule(pts, _normalize(wts))


def _check(n: int, dim: int) -> None:
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"quadrature order must be in [1, {MAX_ORDER}], got {n}")
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if dim > MAX_TENSOR_DIM:
        raise ValueError(
            f"tensor-product quadrature is limited to dim <= {MAX_TENSOR_DIM} "
            f"(got {dim}); use the Monte Carlo integration scheme instead"
        )


def gauss_hermite_rule(n: int, dim: int = 1, sigma0: float = 1.0) -> QuadratureRule:
    """Tensor Gauss-Hermite rule for ``N(0, sigma0^2 I_dim)``.

    Exact for polynomials of total degree up to ``2n - 1``.
    """
    _check(n, dim)
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    x, w = hermite_e.hermegauss(n)
    x = 0.5 * (x - x[::-1])  # enforce exact symmetry of the nodes
    w = 0.5 * (w + w[::-1])
    return _tensor([sigma0 * x] * dim, [w] * dim)


def gauss_legendre_rule(n: int, bounds) -> QuadratureRule:
    """Tensor Gauss-Legendre rule for the uniform distribution on a box."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    _check(n, bounds.shape[0])
    x, w = legendre.leggauss(n)
    nodes = [0.5 * (lo + hi) + 0.5 * (hi - lo) * x for lo, hi in bounds]
    return _tensor(nodes, [w] * bounds.shape[0])


def gauss_laguerre_rule(n: int, gamma: float) -> QuadratureRule:
    """Gauss-Laguerre rule for the density ``gamma * exp(gamma * z)`` on ``z <= 0``."""
    _check(n, 1)
    x, w = laguerre.laggauss(n)
    return QuadratureRule((-x / gamma)[:, None], _normalize(w))


def monte_carlo_rule(samples) -> QuadratureRule:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    return QuadratureRule(samples, np.full(n, 1.0 / n))
