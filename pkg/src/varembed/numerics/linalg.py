"""Small dense linear algebra on numpy arrays.

Matrices are plain ``numpy.ndarray`` objects. The routines below add the
validation the rest of the package relies on (symmetry, rank and positive
definiteness checks) on top of LAPACK via ``numpy.linalg``.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonSymmetricError, RankDeficientError

#: Gram matrices whose smallest eigenvalue falls below this fraction of the
#: largest one are rejected rather than regularized.
GRAM_RELATIVE_FLOOR = 1e-12

SYMMETRY_TOL = 1e-10
MAX_EIG_SIZE = 64


def as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def sym_eigendecomp(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    Column ``k`` of the returned matrix is the eigenvector for eigenvalue ``k``.
    Column signs are fixed so that the largest-magnitude entry is positive,
    which makes the output reproducible across LAPACK builds.
    """
    M = as_matrix(M)
    n, m = M.shape
    if n != m:
        raise NonSymmetricError(f"matrix is not square: {M.shape}")
    if n > MAX_EIG_SIZE:
        raise ValueError(f"matrix size {n} exceeds supported maximum {MAX_EIG_SIZE}")
    asym = float(np.max(np.abs(M - M.T))) if n else 0.0
    if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(M)))):
        raise NonSymmetricError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(w, kind="stable")[::-1]
    w, V = w[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return w, V * signs


def _gram_check(G: np.ndarray) -> np.ndarray:
    """Eigenvalues of a (batch of) Gram matrices; raises if any is near-singular."""
    ev = np.linalg.eigvalsh(G)
    lo, hi = ev[..., 0], ev[..., -1]
    bad = ~(lo > GRAM_RELATIVE_FLOOR * hi) | ~np.isfinite(lo)
    if np.any(bad):
        k = int(np.flatnonzero(np.atleast_1d(bad))[0])
        lo_k = float(np.atleast_1d(lo)[k])
        hi_k = float(np.atleast_1d(hi)[k])
        cond = np.sqrt(hi_k / lo_k) if lo_k > 0 else np.inf
        raise RankDeficientError(
            f"Gram matrix J^T J is not positive definite enough "
            f"(smallest eigenvalue {lo_k:.3e}, largest {hi_k:.3e}, "
            f"condition estimate of J {cond:.3e})",
            condition=cond,
            min_eigenvalue=lo_k,
        )
    return ev


def pseudoinverse(J) -> np.ndarray:
    """Moore-Penrose pseudoinverse ``(J^T J)^{-1} J^T`` of a full-column-rank matrix.

    Accepts a single ``(D, d)`` matrix or a batch ``(..., D, d)``.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim == 1:
        J = J[:, None]
    s = np.linalg.svd(J, compute_uv=False)
    smin, smax = s[..., -1], s[..., 0]
    if np.any(~(smin > 1e-10 * smax)):
        k = int(np.flatnonzero(np.atleast_1d(~(smin > 1e-10 * smax)))[0])
        lo, hi = float(np.atleast_1d(smin)[k]), float(np.atleast_1d(smax)[k])
        cond = hi / lo if lo > 0 else np.inf
        raise RankDeficientError(
            f"Jacobian is rank deficient (condition estimate {cond:.3e}); "
            "the Euler-Lagrange equations are undefined here",
            condition=cond,
        )
    Jt = np.swapaxes(J, -1, -2)
    return np.linalg.solve(Jt @ J, Jt)


def half_logdet_gram(J) -> np.ndarray | float:
    """``0.5 * log det(J^T J)`` through a Cholesky factor of the Gram matrix.

    Works on a single ``(D, d)`` matrix (returns a float) or on a batch
    ``(N, D, d)`` (returns shape ``(N,)``).
    """
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    if J.ndim == 1:
        J, single = J[:, None], True
    G = np.swapaxes(J, -1, -2) @ J
    _gram_check(G)
    L = np.linalg.cholesky(G)
    out = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return float(out) if single else out


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_spd(n: int, rng: np.random.Generator, eigenvalues=None) -> np.ndarray:
    """Random SPD matrix ``Q diag(eigenvalues) Q^T``.

    Without explicit eigenvalues, draws them log-uniformly from [0.25, 8]
    and resamples until neighbouring values differ by at least 5 percent.
    """
    if eigenvalues is None:
        while True:
            ev = np.sort(np.exp(rng.uniform(np.log(0.25), np.log(8.0), size=n)))[::-1]
            if n < 2 or np.min(ev[:-1] / ev[1:]) > 1.05:
                break
    else:
        ev = np.asarray(eigenvalues, dtype=float)
    Q = random_orthogonal(n, rng)
    M = (Q * ev) @ Q.T
    return 0.5 * (M + M.T)
