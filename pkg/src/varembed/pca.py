"""Closed-form optimum for a Gaussian density and a Gaussian prior.

For ``p = N(mu, Sigma)`` and ``q = N(0, sigma0^2 I_d)`` the maximizing linear
map is ``A = sum_k (sqrt(lambda_k) / sigma0) v_k q_k^T`` over the top ``d``
eigenpairs of ``Sigma``, with an arbitrary orthogonal gauge ``Q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .errors import DegenerateSpectrumError, RankDeficientError
from .numerics.linalg import as_matrix, sym_eigendecomp

TIE_RTOL = 1e-9


@dataclass(frozen=True)
class PcaSolution:
    A: np.ndarray
    eigenvalues: np.ndarray  # all of Sigma, descending
    eigenvectors: np.ndarray
    sigma0: float
    gauge: np.ndarray

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.A, compute_uv=False)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "sigma0": self.sigma0,
            "gauge": self.gauge.tolist(),
        }


def closed_form_solution(Sigma, d: int, sigma0: float = 1.0, gauge=None) -> PcaSolution:
    """Optimal linear embedding of ``N(., Sigma)`` from a ``d``-dimensional Gaussian prior.

    Raises ``DegenerateSpectrumError`` when ``lambda_d == lambda_{d+1}``:
    the top-d subspace is then not unique and many maximizers exist.
    """
    Sigma = as_matrix(Sigma)
    D = Sigma.shape[0]
    if not 1 <= d <= D:
        raise ValueError(f"need 1 <= d <= D, got d={d}, D={D}")
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    lam, V = sym_eigendecomp(Sigma)
    if lam[-1] <= 0:
        raise ValueError("Sigma must be positive definite")
    if d < D and lam[d - 1] - lam[d] <= TIE_RTOL * lam[d - 1]:
        raise DegenerateSpectrumError(
            f"eigenvalue tie at the cut (lambda_{d} = lambda_{d + 1} = {lam[d]:.6g}): "
            "the optimal subspace is not unique, so multiple solutions are expected"
        )
    Q = np.eye(d) if gauge is None else np.atleast_2d(np.asarray(gauge, dtype=float))
    if Q.shape != (d, d) or not np.allclose(Q.T @ Q, np.eye(d), atol=1e-10):
        raise ValueError("gauge must be a d x d orthogonal matrix")
    A = (V[:, :d] * (np.sqrt(lam[:d]) / sigma0)) @ Q.T
    return PcaSolution(A, lam, V, float(sigma0), Q)


def optimal_phi_part(eigenvalues, sigma0: float = 1.0) -> float:
    """``-d/2 + 1/2 sum_k log(lambda_k / sigma0^2)`` over the given top eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    return float(-0.5 * lam.size + 0.5 * np.sum(np.log(lam / sigma0**2)))


def closed_form_objective(Sigma, d: int) -> float:
    """Full objective at the optimum: ``-((D-d)/2) log 2 pi - 1/2 sum_{i>d} log lambda_i``.

    Independent of ``sigma0`` and of the gauge.
    """
    lam, _ = sym_eigendecomp(as_matrix(Sigma))
    D = lam.size
    return float(-0.5 * (D - d) * math.log(2 * math.pi) - 0.5 * np.sum(np.log(lam[d:])))


def fixed_point_residual(A, Sigma, sigma0: float = 1.0) -> float:
    """``||Sigma A - sigma0^2 A A^T A||_F / max(1, ||Sigma A||_F)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = as_matrix(Sigma)
    SA = Sigma @ A
    return float(np.linalg.norm(SA - sigma0**2 * A @ A.T @ A) / max(1.0, np.linalg.norm(SA)))


def principal_angles(A, B, k: int | None = None) -> np.ndarray:
    """Principal angles (ascending, radians) between the column spans of A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise ValueError("A and B must live in the same ambient space")
    for name, M in (("A", A), ("B", B)):
        s = np.linalg.svd(M, compute_uv=False)
        if s.size == 0 or s[-1] <= 1e-10 * s[0]:
            raise RankDeficientError(f"{name} does not have full column rank")
    angles = np.sort(subspace_angles(A, B))
    return angles if k is None else angles[:k]
