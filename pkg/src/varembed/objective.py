"""Estimation of the embedding objective and its parameter gradient.

For a prior ``q``, a density ``p`` and an embedding ``phi`` the objective is

    J[phi] = E_q[ 0.5 log det(J^T J) + log p(phi(z)) - log q(z) ],

evaluated here as a weighted sum over the nodes of a quadrature rule (or a
seeded Monte Carlo sample). All normalizing constants are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingModel
from .errors import IterateInvalid, RankDeficientError
from .models import LOG_UNDERFLOW, DensityModel, IsotropicGaussian, PriorModel
from .numerics import QuadratureRule, Tape, gauss_hermite_rule, grad_of_scalar, monte_carlo_rule
from .numerics import tape as T


@dataclass(frozen=True)
class IntegrationConfig:
    scheme: str = "quadrature"  # or "monte-carlo"
    order: int = 16
    samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("quadrature", "monte-carlo"):
            raise ValueError(f"unknown integration scheme {self.scheme!r}")
        if self.order < 1 or self.samples < 2:
            raise ValueError("order must be >= 1 and samples >= 2")

    def label(self) -> str:
        if self.scheme == "quadrature":
            return "quadrature"
        return f"monte-carlo(seed={self.seed})"


def integration_rule(prior: PriorModel, scheme: IntegrationConfig) -> QuadratureRule:
    if scheme.scheme == "quadrature":
        return prior.quadrature(scheme.order)
    return monte_carlo_rule(prior.sample(scheme.samples, scheme.seed))


@dataclass
class ObjectiveEstimate:
    value: float
    gradient: np.ndarray | None
    node_count: int
    integration_scheme: str
    stderr: float | None
    finiteness: dict = field(default_factory=dict)
    penalty: float = 0.0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "node_count": self.node_count,
            "integration_scheme": self.integration_scheme,
            "stderr": self.stderr,
            "finiteness": self.finiteness,
            "penalty": self.penalty,
        }


def _repulsion(phi, z: np.ndarray, w: np.ndarray, length: float, min_sep: float):
    """Soft penalty on pairs of latent-distant nodes that map close together."""
    n, D = phi.shape
    spread = float(np.sqrt(np.sum(w[:, None] * (z - w @ z) ** 2) / z.shape[1])) or 1.0
    lat = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1) / spread
    mask = (lat > min_sep) * np.outer(w, w)
    diff = phi.reshape(n, 1, D) - phi.reshape(1, n, D) if T.is_var(phi) else phi[:, None, :] - phi[None, :, :]
    sq = T.sum_(diff * diff, axis=-1)
    return T.sum_(T.exp(sq * (-0.5 / length**2)) * mask)


def estimate_objective(
    embedding: EmbeddingModel,
    prior: PriorModel,
    density: DensityModel,
    scheme: IntegrationConfig | None = None,
    want_gradient: bool = False,
    rule: QuadratureRule | None = None,
    repulsion: float = 0.0,
    repulsion_length: float = 0.1,
) -> ObjectiveEstimate:
    """Value (and optionally exact gradient) of the discretized objective.

    Raises ``IterateInvalid`` when any node has a near-singular Gram matrix
    or a log-density below the underflow threshold. With ``repulsion > 0``
    the gradient is that of ``J - repulsion * penalty``; ``value`` stays J.
    """
    scheme = scheme or IntegrationConfig()
    if embedding.d != prior.latent_dim:
        raise ValueError(f"embedding latent dim {embedding.d} != prior dim {prior.latent_dim}")
    if embedding.D != density.ambient_dim:
        raise ValueError(f"embedding ambient dim {embedding.D} != density dim {density.ambient_dim}")
    rule = rule or integration_rule(prior, scheme)
    z, w = rule.nodes, rule.weights
    logq = np.asarray(prior.log_density(z), dtype=float).reshape(-1)
    if not np.all(np.isfinite(logq)):
        raise ValueError("integration nodes outside the prior support")

    if want_gradient:
        tape = Tape()
        theta = tape.variable(embedding.theta)
        phi, J = embedding.forward_theta(theta, z)
    else:
        phi, J = embedding.forward(embedding.params, z)

    try:
        hld = T.half_logdet_gram_batch(J)
    except RankDeficientError as exc:
        raise IterateInvalid(f"rank-deficient Jacobian at an integration node: {exc}") from exc
    logp = density.log_density_expr(phi)
    logp_v = T.value_of(logp)
    if not np.all(logp_v >= LOG_UNDERFLOW):
        k = int(np.argmin(np.nan_to_num(logp_v, nan=-np.inf)))
        raise IterateInvalid(
            f"log-density underflow at node z={z[k].tolist()} (log p = {logp_v[k]:.1f})"
        )
    integrand = hld + logp - logq
    total = T.sum_(integrand * w)
    value = float(T.value_of(total))

    pen_value = 0.0
    target = total
    if repulsion > 0:
        pen = _repulsion(phi, z, w, repulsion_length, 0.5)
        pen_value = float(T.value_of(pen))
        target = total - repulsion * pen

    grad = grad_of_scalar(tape, target, theta) if want_gradient else None

    f = T.value_of(integrand)
    stderr = None
    if scheme.scheme == "monte-carlo" and rule.nodes.shape[0] > 1:
        stderr = float(np.std(f, ddof=1) / math.sqrt(len(f)))
    return ObjectiveEstimate(
        value=value,
        gradient=grad,
        node_count=len(w),
        integration_scheme=scheme.label(),
        stderr=stderr,
        finiteness=_finiteness(T.value_of(phi), T.value_of(hld), w),
        penalty=pen_value,
    )


def _finiteness(phi: np.ndarray, hld: np.ndarray, w: np.ndarray) -> dict:
    return {
        "mean_volume_element": float(np.sum(w * np.exp(hld))),
        "mean_squared_norm": float(np.sum(w * np.sum(phi * phi, axis=-1))),
    }


def finiteness_report(embedding: EmbeddingModel, prior: PriorModel,
                      scheme: IntegrationConfig | None = None, ceilings=(1e6, 1e6)) -> dict:
    """Discrete versions of ``E_q[sqrt det(J^T J)]`` and ``E_q[||phi||^2]``.

    Values above the ceilings are flagged; this never raises for large values.
    """
    scheme = scheme or IntegrationConfig()
    rule = integration_rule(prior, scheme)
    phi, J = embedding.forward(embedding.params, rule.nodes)
    G = np.swapaxes(J, -1, -2) @ J
    vol = np.sqrt(np.clip(np.linalg.det(G), 0.0, None))
    out = {
        "mean_volume_element": float(np.sum(rule.weights * vol)),
        "mean_squared_norm": float(np.sum(rule.weights * np.sum(phi * phi, axis=-1))),
    }
    out["flags"] = [
        name
        for name, ceil in zip(("mean_volume_element", "mean_squared_norm"), ceilings)
        if not out[name] <= ceil
    ]
    return out


# ---------------------------------------------------------------------------
# reparameterization
# ---------------------------------------------------------------------------


class ReparameterizedEmbedding(EmbeddingModel):
    """``phi(G z' + h)`` for an invertible affine latent map."""

    family = "reparameterized"

    def __init__(self, base: EmbeddingModel, G, h):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "G", np.atleast_2d(np.asarray(G, dtype=float)))
        object.__setattr__(self, "h", np.asarray(h, dtype=float).reshape(-1))
        object.__setattr__(self, "d", base.d)
        object.__setattr__(self, "D", base.D)
        object.__setattr__(self, "theta", base.theta)

    def param_shapes(self):
        return self.base.param_shapes()

    def forward(self, params, z):
        phi, J = self.base.forward(params, z @ self.G.T + self.h)
        return phi, T.matmul(J, self.G)


class PushforwardPrior(PriorModel):
    """``q~(z') = q(G z' + h) |det G|``, the prior expressed in new coordinates."""

    kind = "pushforward"

    def __init__(self, base: PriorModel, G, h):
        self.base = base
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.h = np.asarray(h, dtype=float).reshape(-1)
        self.Ginv = np.linalg.inv(self.G)
        self.logdet = float(np.linalg.slogdet(self.G)[1])

    @property
    def latent_dim(self):
        return self.base.latent_dim

    def _to_base(self, z):
        return z @ self.G.T + self.h

    def _log_density(self, z):
        return self.base.log_density(self._to_base(z)) + self.logdet

    def _grad_log_density(self, z):
        return self.base.grad_log_density(self._to_base(z)) @ self.G

    def _sample(self, n, rng):
        zb = self.base._sample(n, rng)
        return (zb - self.h) @ self.Ginv.T

    def quadrature(self, n: int) -> QuadratureRule:
        if isinstance(self.base, IsotropicGaussian):
            # built directly for N(m, C) from its own Cholesky factor
            d = self.latent_dim
            mean = -self.Ginv @ self.h
            cov = self.base.sigma0**2 * self.Ginv @ self.Ginv.T
            L = np.linalg.cholesky(0.5 * (cov + cov.T))
            std = gauss_hermite_rule(n, d, 1.0)
            return QuadratureRule(std.nodes @ L.T + mean, std.weights)
        base = self.base.quadrature(n)
        return QuadratureRule((base.nodes - self.h) @ self.Ginv.T, base.weights)


def check_reparameterization_invariance(
    embedding: EmbeddingModel,
    prior: PriorModel,
    density: DensityModel,
    reparam,
    scheme: IntegrationConfig | None = None,
) -> dict:
    """Compare J in the original coordinates with J after ``z = G z' + h``.

    ``reparam`` is a pair ``(G, h)``. The transformed side evaluates the
    composed map against the pushed-forward prior with its own integration
    rule.
    """
    G, h = reparam
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    if G.shape != (prior.latent_dim, prior.latent_dim):
        raise ValueError("reparameterization matrix has the wrong shape")
    if not abs(np.linalg.det(G)) > 1e-10:
        raise ValueError("reparameterization is singular (|det G| <= 1e-10)")
    scheme = scheme or IntegrationConfig()
    j0 = estimate_objective(embedding, prior, density, scheme).value
    new_prior = PushforwardPrior(prior, G, h)
    new_emb = ReparameterizedEmbedding(embedding, G, h)
    j1 = estimate_objective(new_emb, new_prior, density, scheme).value
    return {"J_original": j0, "J_transformed": j1, "difference": abs(j1 - j0)}
