"""Ambient data densities and latent priors.

Densities expose three views of the same formula:

* ``log_density(x)`` -- numpy, normalized, with the underflow sentinel
  (values below ``LOG_UNDERFLOW`` come back as ``-inf``);
* ``score(x)`` -- the analytic gradient of the log-density;
* ``log_density_expr(x)`` -- the raw formula written with the tape
  functions, so it can be differentiated through an embedding.

Points are rows: a batch has shape ``(N, D)``, a single point ``(D,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .numerics import gauss_hermite_rule, gauss_laguerre_rule, gauss_legendre_rule
from .numerics import tape as T
from .numerics.linalg import as_matrix, sym_eigendecomp

LOG_UNDERFLOW = -745.0


def _batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x, single


def _sphere_area(D: int) -> float:
    """Surface measure of the unit sphere in R^D (2 for D=1)."""
    return 2.0 * math.pi ** (D / 2) / math.gamma(D / 2)


def _radial_op(x, center, f, df):
    """``f(||x - c||)`` recorded with gradient ``f'(r) (x - c) / r`` (zero at r = 0)."""
    xv = T.value_of(x)
    diff = xv - center
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    out = f(r)
    if not T.is_var(x):
        return out
    safe = np.where(r > 0, r, 1.0)
    unit = np.where((r > 0)[..., None], diff / safe[..., None], 0.0)
    return T.primitive(out, [(x, lambda g: (g * df(r))[..., None] * unit)])


# ---------------------------------------------------------------------------
# ambient densities
# ---------------------------------------------------------------------------


class DensityModel:
    kind: str = ""
    ambient_dim: int

    def log_density_expr(self, x):
        raise NotImplementedError

    def log_density(self, x):
        xb, single = _batch(x, self.ambient_dim)
        v = np.asarray(self.log_density_expr(xb), dtype=float)
        v = np.where(v < LOG_UNDERFLOW, -np.inf, v)
        return float(v[0]) if single else v

    def score(self, x):
        xb, single = _batch(x, self.ambient_dim)
        s = self._score(xb)
        return s[0] if single else s

    def _score(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MultivariateGaussian(DensityModel):
    mean: np.ndarray
    covariance: np.ndarray
    kind = "gaussian"

    def __post_init__(self):
        cov = as_matrix(self.covariance)
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("mean and covariance dimensions disagree")
        ev, _ = sym_eigendecomp(cov)
        if ev[-1] <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        prec = np.linalg.inv(cov)
        object.__setattr__(self, "_precision", 0.5 * (prec + prec.T))
        object.__setattr__(
            self, "_lognorm", -0.5 * (mean.size * math.log(2 * math.pi) + float(np.sum(np.log(ev))))
        )

    @property
    def ambient_dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return self._precision

    def log_density_expr(self, x):
        diff = x - self.mean
        y = T.matmul(diff, self._precision)
        return self._lognorm - 0.5 * T.sum_(y * diff, axis=-1)

    def _score(self, x):
        return -(x - self.mean) @ self._precision

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixture(DensityModel):
    weights: np.ndarray
    centers: np.ndarray
    variance: float
    kind = "mixture"

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != c.shape[0]:
            raise ValueError("one weight per center required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variance", float(self.variance))

    @classmethod
    def equal(cls, centers, variance):
        c = np.atleast_2d(np.asarray(centers, dtype=float))
        return cls(np.full(c.shape[0], 1.0 / c.shape[0]), c, variance)

    @property
    def ambient_dim(self) -> int:
        return self.centers.shape[1]

    def _logits(self, x):
        D = self.ambient_dim
        if T.is_var(x):
            diff = x.reshape(x.shape[0], 1, D) - self.centers[None, :, :]
        else:
            diff = x[:, None, :] - self.centers[None, :, :]
        sq = T.sum_(diff * diff, axis=-1)
        const = np.log(self.weights) - 0.5 * D * math.log(2 * math.pi * self.variance)
        return const - sq / (2.0 * self.variance)

    def log_density_expr(self, x):
        return T.logsumexp(self._logits(x), axis=-1)

    def _score(self, x):
        logits = self._logits(x)
        resp = np.exp(logits - special.logsumexp(logits, axis=-1, keepdims=True))
        return (resp @ self.centers - x) / self.variance

    def to_dict(self):
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "variance": self.variance,
        }


@dataclass(frozen=True, eq=False)
class SmoothedUniformBall(DensityModel):
    """Uniform ball with a logistic edge of width ``1/sharpness``.

    ``log p(x) = -softplus(sharpness * (||x - c|| - radius)) - log Z``
    """

    center: np.ndarray
    radius: float
    sharpness: float | None = None
    kind = "smoothed_ball"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        beta = 50.0 / self.radius if self.sharpness is None else float(self.sharpness)
        if not beta > 0:
            raise ValueError("sharpness must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "sharpness", beta)
        object.__setattr__(self, "_lognorm", -math.log(self._normalizer()))

    def _normalizer(self) -> float:
        D, R, b = self.center.size, self.radius, self.sharpness

        def radial(r):
            return r ** (D - 1) * special.expit(-b * (r - R))

        inner, _ = integrate.quad(radial, 0.0, R, limit=200, epsabs=0, epsrel=1e-13)
        outer, _ = integrate.quad(radial, R, np.inf, limit=200, epsabs=0, epsrel=1e-13)
        return _sphere_area(D) * (inner + outer)

    @property
    def ambient_dim(self) -> int:
        return self.center.size

    def log_density_expr(self, x):
        b, R = self.sharpness, self.radius
        prof = _radial_op(
            x,
            self.center,
            lambda r: np.logaddexp(0.0, b * (r - R)),
            lambda r: b * special.expit(b * (r - R)),
        )
        return self._lognorm - prof

    def _score(self, x):
        diff = x - self.center
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        safe = np.where(r > 0, r, 1.0)
        mag = self.sharpness * special.expit(self.sharpness * (r - self.radius))
        return np.where((r > 0)[:, None], -(mag / safe)[:, None] * diff, 0.0)

    def to_dict(self):
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "radius": self.radius,
            "sharpness": self.sharpness,
        }


@dataclass(frozen=True, eq=False)
class Ring(DensityModel):
    """Rotation-invariant density with a Gaussian radial profile around ``radius``."""

    center: np.ndarray
    radius: float
    width: float
    kind = "ring"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.size < 2:
            raise ValueError("ring needs ambient dimension >= 2")
        if not (self.radius > 0 and self.width > 0):
            raise ValueError("radius and width must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "width", float(self.width))
        D, r0, s = c.size, self.radius, self.width
        val, _ = integrate.quad(
            lambda r: r ** (D - 1) * math.exp(-((r - r0) ** 2) / (2 * s * s)),
            0.0, r0 + 40 * s, points=[r0], limit=200, epsabs=0, epsrel=1e-13,
        )
        object.__setattr__(self, "_lognorm", -math.log(_sphere_area(D) * val))

    @property
    def ambient_dim(self) -> int:
        return self.center.size

    def log_density_expr(self, x):
        r0, s2 = self.radius, self.width**2
        prof = _radial_op(
            x, self.center, lambda r: (r - r0) ** 2 / (2 * s2), lambda r: (r - r0) / s2
        )
        return self._lognorm - prof

    def _score(self, x):
        diff = x - self.center
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        safe = np.where(r > 0, r, 1.0)
        mag = (r - self.radius) / self.width**2
        return np.where((r > 0)[:, None], -(mag / safe)[:, None] * diff, 0.0)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius, "width": self.width}


def log_density(model: DensityModel, x):
    return model.log_density(x)


def score(model: DensityModel, x):
    return model.score(x)


def density_from_dict(spec: dict) -> DensityModel:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "gaussian":
        return MultivariateGaussian(**spec)
    if kind == "mixture":
        return GaussianMixture(**spec)
    if kind == "smoothed_ball":
        return SmoothedUniformBall(**spec)
    if kind == "ring":
        return Ring(**spec)
    raise ValueError(f"unknown density kind {kind!r}")


# ---------------------------------------------------------------------------
# latent priors
# ---------------------------------------------------------------------------


class PriorModel:
    kind: str = ""
    latent_dim: int

    def log_density(self, z):
        zb, single = _batch(z, self.latent_dim)
        v = self._log_density(zb)
        return float(v[0]) if single else v

    def grad_log_density(self, z):
        zb, single = _batch(z, self.latent_dim)
        g = self._grad_log_density(zb)
        return g[0] if single else g

    def density(self, z):
        return np.exp(self.log_density(z))

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValueError("sample count must be >= 1")
        return self._sample(n, np.random.default_rng(seed))

    def quadrature(self, n: int):
        raise NotImplementedError

    def central_interval(self, mass: float) -> tuple[float, float]:
        """Equal-tailed interval holding ``mass`` of a 1D prior."""
        if self.latent_dim != 1:
            raise ValueError("central_interval is defined for 1D priors")
        lo, hi = self.ppf(0.5 * (1 - mass)), self.ppf(0.5 * (1 + mass))
        return float(lo), float(hi)

    def in_mass_region(self, z, mass: float) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class IsotropicGaussian(PriorModel):
    sigma0: float = 1.0
    dim: int = 1
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def latent_dim(self) -> int:
        return self.dim

    def _log_density(self, z):
        s2 = self.sigma0**2
        return -0.5 * np.sum(z * z, axis=-1) / s2 - 0.5 * self.dim * math.log(2 * math.pi * s2)

    def _grad_log_density(self, z):
        return -z / self.sigma0**2

    def _sample(self, n, rng):
        return self.sigma0 * rng.standard_normal((n, self.dim))

    def quadrature(self, n: int):
        return gauss_hermite_rule(n, self.dim, self.sigma0)

    def cdf(self, z):
        return stats.norm.cdf(np.asarray(z, dtype=float) / self.sigma0)

    def ppf(self, u):
        return self.sigma0 * stats.norm.ppf(u)

    def in_mass_region(self, z, mass):
        z, _ = _batch(z, self.dim)
        r2 = np.sum(z * z, axis=-1) / self.sigma0**2
        return r2 <= stats.chi2.ppf(mass, self.dim)

    def to_dict(self):
        return {"kind": self.kind, "sigma0": self.sigma0, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class UniformBox(PriorModel):
    bounds: np.ndarray  # (d, 2)
    kind = "uniform"

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.shape[1] != 2 or np.any(b[:, 1] <= b[:, 0]):
            raise ValueError("bounds must be (d, 2) with lo < hi")
        object.__setattr__(self, "bounds", b)

    @property
    def latent_dim(self) -> int:
        return self.bounds.shape[0]

    def _inside(self, z):
        return np.all((z >= self.bounds[:, 0]) & (z <= self.bounds[:, 1]), axis=-1)

    def _log_density(self, z):
        val = -float(np.sum(np.log(self.bounds[:, 1] - self.bounds[:, 0])))
        return np.where(self._inside(z), val, -np.inf)

    def _grad_log_density(self, z):
        return np.zeros_like(z)

    def _sample(self, n, rng):
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((n, self.latent_dim))

    def quadrature(self, n: int):
        return gauss_legendre_rule(n, self.bounds)

    def cdf(self, z):
        lo, hi = self.bounds[0]
        return np.clip((np.asarray(z, dtype=float) - lo) / (hi - lo), 0.0, 1.0)

    def ppf(self, u):
        lo, hi = self.bounds[0]
        return lo + (hi - lo) * np.asarray(u, dtype=float)

    def in_mass_region(self, z, mass):
        z, _ = _batch(z, self.latent_dim)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        shrink = 0.5 * (1 - mass ** (1.0 / self.latent_dim)) * (hi - lo)
        return np.all((z >= lo + shrink) & (z <= hi - shrink), axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "bounds": self.bounds.tolist()}


@dataclass(frozen=True, eq=False)
class TruncatedExponential(PriorModel):
    """``q(z) = gamma * exp(gamma * z)`` on ``z <= 0``."""

    gamma: float
    kind = "exponential"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def latent_dim(self) -> int:
        return 1

    def _log_density(self, z):
        z = z[:, 0]
        return np.where(z <= 0, math.log(self.gamma) + self.gamma * z, -np.inf)

    def _grad_log_density(self, z):
        return np.full_like(z, self.gamma)

    def _sample(self, n, rng):
        return -rng.exponential(1.0 / self.gamma, size=(n, 1))

    def quadrature(self, n: int):
        return gauss_laguerre_rule(n, self.gamma)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z <= 0, np.exp(self.gamma * np.minimum(z, 0.0)), 1.0)

    def ppf(self, u):
        return np.log(np.asarray(u, dtype=float)) / self.gamma

    def in_mass_region(self, z, mass):
        z, _ = _batch(z, 1)
        return (z[:, 0] <= 0) & (z[:, 0] >= self.ppf(1 - mass))

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}


def prior_log_density(prior: PriorModel, z):
    return prior.log_density(z)


def sample_prior(prior: PriorModel, count: int, seed: int) -> np.ndarray:
    return prior.sample(count, seed)


def prior_from_dict(spec: dict) -> PriorModel:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "gaussian":
        return IsotropicGaussian(**spec)
    if kind == "uniform":
        return UniformBox(**spec)
    if kind == "exponential":
        return TruncatedExponential(**spec)
    raise ValueError(f"unknown prior kind {kind!r}")
