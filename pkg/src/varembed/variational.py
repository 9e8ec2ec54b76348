"""Stationarity residuals and conserved quantities of the embedding objective.

Latent derivatives use central differences with step ``h = 1e-4 (1 + ||z||)``
unless a step is given. Parameter derivatives are not involved here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingModel
from .errors import IterateInvalid, RankDeficientError
from .models import DensityModel, PriorModel
from .numerics.linalg import half_logdet_gram, pseudoinverse


def default_step(z) -> float:
    return 1e-4 * (1.0 + float(np.linalg.norm(z)))


def _point(z, d: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != d:
        raise ValueError(f"expected a latent point of dimension {d}, got {z.size}")
    return z


def _pinv_at(embedding: EmbeddingModel, z: np.ndarray) -> np.ndarray:
    try:
        return pseudoinverse(embedding.jacobian(z).reshape(embedding.D, embedding.d))
    except RankDeficientError as exc:
        raise RankDeficientError(f"rank-deficient Jacobian at stencil point z={z.tolist()}: {exc}") from exc


def _stencil_divergence(embedding: EmbeddingModel, z: np.ndarray, h: float, weight=None) -> np.ndarray:
    """``sum_j d/dz_j [w(z) J^+_{ji}(z)]`` for every ambient index ``i``."""
    out = np.zeros(embedding.D)
    for j in range(embedding.d):
        e = np.zeros(embedding.d)
        e[j] = h
        zp, zm = z + e, z - e
        fp, fm = _pinv_at(embedding, zp)[j], _pinv_at(embedding, zm)[j]
        if weight is not None:
            fp, fm = fp * weight(zp), fm * weight(zm)
        out += (fp - fm) / (2 * h)
    return out


@dataclass(frozen=True)
class ELResidual:
    z: np.ndarray
    residual: np.ndarray
    absolute: float
    relative: float


def el_residual(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel,
                z, h: float | None = None) -> ELResidual:
    """Residual of ``sum_j [d_j J^+_ji + J^+_ji d_j log q] = s_i(phi)`` at one latent point.

    ``relative`` divides by the score magnitude (or by 1 where the score vanishes).
    """
    z = _point(z, embedding.d)
    h = default_step(z) if h is None else h
    lhs = _stencil_divergence(embedding, z, h)
    lhs = lhs + _pinv_at(embedding, z).T @ np.asarray(prior.grad_log_density(z)).reshape(-1)
    s = np.asarray(density.score(embedding.eval(z).reshape(-1))).reshape(-1)
    r = lhs - s
    a = float(np.linalg.norm(r))
    ns = float(np.linalg.norm(s))
    return ELResidual(z, r, a, a / ns if ns > 0 else a)


def embedding_energy(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel, z):
    """``E = -1/2 log det(J^T J) - log p(phi(z)) + log q(z)``; scalar for one point, array for a batch."""
    zb = np.asarray(z, dtype=float)
    single = zb.ndim <= 1 and zb.size == embedding.d
    zb = zb.reshape(-1, embedding.d)
    phi, J = embedding.forward(embedding.params, zb)
    try:
        hld = half_logdet_gram(np.asarray(J))
    except RankDeficientError as exc:
        raise IterateInvalid(f"rank-deficient Jacobian: {exc}") from exc
    logp = density.log_density(np.asarray(phi))
    if not np.all(np.isfinite(logp)):
        raise IterateInvalid("log-density underflow while evaluating the energy")
    E = -np.atleast_1d(hld) - logp + prior.log_density(zb)
    return float(E[0]) if single else E


def angular_momentum_1d(embedding: EmbeddingModel, prior: PriorModel, z, center=None) -> float:
    """``q(z) (phi1' phi2 - phi1 phi2') / ||phi'||^2`` about ``center`` (default origin)."""
    if embedding.d != 1 or embedding.D != 2:
        raise ValueError("angular momentum is defined here for d = 1, D = 2")
    z = _point(z, 1)
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    phi = embedding.eval(z).reshape(2) - c
    v = embedding.jacobian(z).reshape(2)
    speed2 = float(v @ v)
    if not speed2 > 1e-24:
        raise RankDeficientError(f"zero velocity at z={float(z[0])}")
    return float(prior.density(z) * (v[0] * phi[1] - phi[0] * v[1]) / speed2)


def canonical_momentum_divergence(embedding: EmbeddingModel, prior: PriorModel, direction: int,
                                  z, h: float | None = None) -> float:
    """``sum_j d_j [J^+_{j,direction} q(z)]`` by central differences."""
    if not 0 <= direction < embedding.D:
        raise ValueError(f"direction must be in [0, {embedding.D})")
    z = _point(z, embedding.d)
    h = default_step(z) if h is None else h
    div = _stencil_divergence(embedding, z, h, weight=lambda y: float(prior.density(y)))
    return float(div[direction])


def stress_energy(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel, z) -> np.ndarray:
    """``T_ij = delta_ij (q - L)`` with Lagrangian density ``L = q (1/2 log det + log p - log q)``.

    The contraction ``J^+ J = I`` is checked first; failure signals rank trouble.
    """
    z = _point(z, embedding.d)
    J = embedding.jacobian(z).reshape(embedding.D, embedding.d)
    P = _pinv_at(embedding, z)
    err = float(np.max(np.abs(P @ J - np.eye(embedding.d))))
    if err > 1e-8:
        raise RankDeficientError(f"pseudoinverse contraction off identity by {err:.2e} at z={z.tolist()}")
    q = float(prior.density(z))
    lagrangian = -q * embedding_energy(embedding, prior, density, z)
    return np.eye(embedding.d) * (q - lagrangian)


# ---------------------------------------------------------------------------
# conservation report
# ---------------------------------------------------------------------------


def mass_region_samples(prior: PriorModel, n: int, seed: int, mass: float = 0.99) -> np.ndarray:
    """``n`` prior samples restricted to the region holding ``mass`` of the prior."""
    rng_seed, kept, draws = seed, [], 0
    while sum(len(k) for k in kept) < n:
        z = prior.sample(4 * n, rng_seed + draws)
        kept.append(z[prior.in_mass_region(z, mass)])
        draws += 1
        if draws > 100:
            raise RuntimeError("could not draw enough samples inside the mass region")
    return np.concatenate(kept)[:n]


@dataclass
class ConservationTrace:
    samples: np.ndarray
    energy: np.ndarray
    momentum: np.ndarray  # (n, d, D) entries of J^+ q
    angular: np.ndarray | None
    summary: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        n, d = self.samples.shape
        D = self.momentum.shape[2]
        header = [f"z{j} [latent]" for j in range(d)] + ["E [nats]"]
        header += [f"momentum_{j}_{i} [density/ambient]" for j in range(d) for i in range(D)]
        if self.angular is not None:
            header.append("L [density*ambient]")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(n):
                row = [repr(float(v)) for v in self.samples[k]] + [repr(float(self.energy[k]))]
                row += [repr(float(v)) for v in self.momentum[k].reshape(-1)]
                if self.angular is not None:
                    row.append(repr(float(self.angular[k])))
                w.writerow(row)


def _stats(v: np.ndarray) -> dict:
    mean, std = float(np.mean(v)), float(np.std(v))
    return {
        "mean": mean,
        "std": std,
        "range": float(np.max(v) - np.min(v)),
        "relative_std": std / (1.0 + abs(mean)),
    }


def energy_conservation_report(embedding: EmbeddingModel, prior: PriorModel, density: DensityModel,
                               n: int = 256, seed: int = 0, mass: float = 0.99,
                               angular_mass: float = 0.9, center=None) -> ConservationTrace:
    """Energy, momentum density and (for planar curves) angular momentum at prior samples.

    ``summary["energy"]["relative_std"]`` is ``std(E) / (1 + |mean(E)|)``. The
    angular-momentum coefficient of variation uses the samples inside the
    central ``angular_mass`` region.
    """
    z = mass_region_samples(prior, n, seed, mass)
    E = embedding_energy(embedding, prior, density, z)
    q = prior.density(z)
    _, J = embedding.forward(embedding.params, z)
    P = pseudoinverse(np.asarray(J))
    momentum = P * q[:, None, None]
    summary = {"energy": _stats(E), "samples": int(len(z))}
    L = None
    if embedding.d == 1 and embedding.D == 2:
        L = np.array([angular_momentum_1d(embedding, prior, zk, center) for zk in z])
        central = prior.in_mass_region(z, angular_mass)
        Lc = L[central]
        summary["angular_momentum"] = {
            **_stats(L),
            "cv": float(np.std(Lc) / abs(np.mean(Lc))) if abs(np.mean(Lc)) > 0 else float("inf"),
        }
    return ConservationTrace(z, E, momentum, L, summary)
