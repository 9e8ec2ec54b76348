"""Parameterized smooth maps from latent space R^d to ambient space R^D.

Every family stores its parameters as one flat vector ``theta`` and
implements ``forward(params, z)`` returning ``(phi, J)`` for a batch of
latent points: ``phi`` has shape ``(N, D)`` and the analytic Jacobian ``J``
has shape ``(N, D, d)``. ``forward`` is written with the tape functions, so
passing recorded parameters yields exact parameter derivatives of both.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import tape as T
from .numerics.linalg import random_orthogonal


def _latent_batch(z, d: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    if z.ndim == 0:
        z = z.reshape(1, 1)
    elif z.ndim == 1:
        z = z[None, :] if z.size == d else z[:, None] if d == 1 else z[None, :]
    if z.shape[-1] != d:
        raise ValueError(f"expected latent points of dimension {d}, got shape {z.shape}")
    return z, single and z.shape[0] == 1


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    d: int
    D: int
    theta: np.ndarray | None = field(default=None, repr=False)

    family = ""

    def __post_init__(self):
        if self.theta is None:
            object.__setattr__(self, "theta", np.zeros(self.n_params))
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != self.n_params:
            raise ValueError(f"{self.family}: expected {self.n_params} parameters, got {theta.size}")
        object.__setattr__(self, "theta", theta)

    # -- parameter layout --------------------------------------------------
    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def unflatten(self, theta) -> dict:
        out, k = {}, 0
        for name, shape in self.param_shapes():
            n = int(np.prod(shape))
            piece = theta[k : k + n]
            out[name] = piece.reshape(shape)
            k += n
        return out

    def flatten(self, params: dict) -> np.ndarray:
        return np.concatenate(
            [np.asarray(params[name], dtype=float).reshape(-1) for name, _ in self.param_shapes()]
        ) if self.param_shapes() else np.zeros(0)

    @property
    def params(self) -> dict:
        return self.unflatten(self.theta)

    def with_theta(self, theta) -> "EmbeddingModel":
        return dataclasses.replace(self, theta=np.array(theta, dtype=float))

    # -- evaluation ----------------------------------------------------------
    def forward(self, params: dict, z: np.ndarray):
        raise NotImplementedError

    def forward_theta(self, theta, z: np.ndarray):
        return self.forward(self.unflatten(theta), z)

    def eval(self, z) -> np.ndarray:
        zb, single = _latent_batch(z, self.d)
        phi, _ = self.forward(self.params, zb)
        phi = np.asarray(phi)
        return phi[0] if single else phi

    def jacobian(self, z) -> np.ndarray:
        zb, single = _latent_batch(z, self.d)
        _, J = self.forward(self.params, zb)
        J = np.asarray(J)
        return J[0] if single else J

    def initialized(self, seed: int) -> "EmbeddingModel":
        """Fresh random parameters drawn by the family's init rule."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.family, "d": self.d, "D": self.D, "theta": self.theta.tolist()}


@dataclass(frozen=True, eq=False)
class Linear(EmbeddingModel):
    """``phi(z) = A z + b``."""

    family = "linear"

    def param_shapes(self):
        return [("A", (self.D, self.d)), ("b", (self.D,))]

    @classmethod
    def from_matrix(cls, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] == 1 and A.shape[1] > 1 and b is None:
            A = A.T
        D, d = A.shape
        b = np.zeros(D) if b is None else np.asarray(b, dtype=float)
        return cls(d, D, np.concatenate([A.reshape(-1), b]))

    def forward(self, params, z):
        A, b = params["A"], params["b"]
        n = z.shape[0]
        phi = T.matmul(z, A.T) + b
        J = T.broadcast_to(A.reshape(1, self.D, self.d), (n, self.D, self.d))
        return phi, J

    def initialized(self, seed):
        rng = np.random.default_rng(seed)
        U = random_orthogonal(self.D, rng)[:, : self.d]
        V = random_orthogonal(self.d, rng)
        s = rng.uniform(0.5, 1.5, size=self.d)
        A = (U * s) @ V.T
        b = np.asarray(self.params["b"], dtype=float)
        return self.with_theta(np.concatenate([A.reshape(-1), b]))


def _left_apply(W, M):
    """``W @ M[n]`` for every ``n`` as one 2D product (faster than batched matmul)."""
    n, k, d = M.shape
    rows = M.swapaxes(1, 2).reshape(n * d, k)
    return T.matmul(rows, W.T).reshape(n, d, W.shape[0]).swapaxes(1, 2)


@dataclass(frozen=True, eq=False)
class Perceptron(EmbeddingModel):
    """Tanh multilayer perceptron with a trainable linear skip ``S z``.

    ``phi(z) = W_out h_L(z) + b_out + S z``
    """

    hidden: tuple[int, ...] = (32, 32)
    skip: bool = True
    family = "perceptron"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        super().__post_init__()

    def param_shapes(self):
        shapes, fan_in = [], self.d
        for i, h in enumerate(self.hidden):
            shapes += [(f"W{i}", (h, fan_in)), (f"b{i}", (h,))]
            fan_in = h
        shapes += [("W_out", (self.D, fan_in)), ("b_out", (self.D,))]
        if self.skip:
            shapes.append(("S", (self.D, self.d)))
        return shapes

    def forward(self, params, z):
        n = z.shape[0]
        h, dh = z, None  # dh: (n, width, d), None means the identity
        for i, width in enumerate(self.hidden):
            W, b = params[f"W{i}"], params[f"b{i}"]
            a = T.matmul(h, W.T) + b
            if dh is None:
                da = W.reshape(1, width, self.d)
            else:
                da = _left_apply(W, dh)
            h = T.tanh(a)
            dh = (1.0 - h * h).reshape(n, width, 1) * da
        W_out = params["W_out"]
        phi = T.matmul(h, W_out.T) + params["b_out"]
        if dh is None:
            J = T.broadcast_to(W_out.reshape(1, self.D, self.d), (n, self.D, self.d))
        else:
            J = _left_apply(W_out, dh)
        if self.skip:
            S = params["S"]
            phi = phi + T.matmul(z, S.T)
            J = J + S.reshape(1, self.D, self.d)
        return phi, J

    def initialized(self, seed):
        rng = np.random.default_rng(seed)
        params = {}
        fan_in = self.d
        for i, h in enumerate(self.hidden):
            params[f"W{i}"] = rng.standard_normal((h, fan_in)) / math.sqrt(fan_in)
            params[f"b{i}"] = np.zeros(h)
            fan_in = h
        params["W_out"] = 0.1 * rng.standard_normal((self.D, fan_in)) / math.sqrt(fan_in)
        params["b_out"] = np.asarray(self.params["b_out"], dtype=float)
        if self.skip:
            params["S"] = np.eye(self.D, self.d)
        return self.with_theta(self.flatten(params))

    def to_dict(self) -> dict:
        return {**super().to_dict(), "hidden": list(self.hidden), "skip": self.skip}


def hermite_features(u: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Hermite polynomials ``He_n(u)`` and their derivatives, n = 0..degree."""
    u = np.asarray(u, dtype=float).reshape(-1)
    H = np.empty((u.size, degree + 1))
    H[:, 0] = 1.0
    if degree >= 1:
        H[:, 1] = u
    for n in range(1, degree):
        H[:, n + 1] = u * H[:, n] - n * H[:, n - 1]
    dH = np.zeros_like(H)
    for n in range(1, degree + 1):
        dH[:, n] = n * H[:, n - 1]
    return H, dH


@dataclass(frozen=True, eq=False)
class Basis1D(EmbeddingModel):
    """``phi(z) = sum_n c_n He_n(z / scale)`` for a one-dimensional latent space.

    Row ``n`` of the coefficient matrix ``C`` (shape ``(degree + 1, D)``)
    multiplies the n-th Hermite feature.
    """

    degree: int = 5
    scale: float = 1.0
    family = "basis1d"

    def __post_init__(self):
        if self.d != 1:
            raise ValueError("Basis1D supports d = 1 only")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        super().__post_init__()

    def param_shapes(self):
        return [("C", (self.degree + 1, self.D))]

    @classmethod
    def from_coefficients(cls, C, scale=1.0):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return cls(1, C.shape[1], C.reshape(-1), degree=C.shape[0] - 1, scale=scale)

    def forward(self, params, z):
        C = params["C"]
        H, dH = hermite_features(z[:, 0] / self.scale, self.degree)
        phi = T.matmul(H, C)
        J = T.matmul(dH / self.scale, C).reshape(z.shape[0], self.D, 1)
        return phi, J

    def coefficient_norms(self) -> np.ndarray:
        return np.linalg.norm(self.params["C"], axis=1)

    def initialized(self, seed):
        rng = np.random.default_rng(seed)
        C = np.zeros((self.degree + 1, self.D))
        C[0] = np.asarray(self.params["C"], dtype=float)[0]
        v = rng.standard_normal(self.D)
        C[1] = v / np.linalg.norm(v) * rng.uniform(0.5, 1.5)
        C[2:] = 1e-2 * rng.standard_normal((self.degree - 1, self.D))
        return self.with_theta(C.reshape(-1))

    def to_dict(self) -> dict:
        return {**super().to_dict(), "degree": self.degree, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class FunctionEmbedding(EmbeddingModel):
    """Fixed analytic map given by callables; has no trainable parameters.

    ``fn`` maps ``(N, d)`` to ``(N, D)`` and ``jac`` maps ``(N, d)`` to ``(N, D, d)``.
    """

    fn: Callable | None = None
    jac: Callable | None = None
    family = "function"

    def param_shapes(self):
        return []

    def forward(self, params, z):
        return np.asarray(self.fn(z), dtype=float), np.asarray(self.jac(z), dtype=float)

    def initialized(self, seed):
        return self

    def to_dict(self):
        raise TypeError("analytic function embeddings are not serializable")


def make_embedding(family: str, d: int, D: int, seed: int = 0, origin=None, **hyper) -> EmbeddingModel:
    """Build a family member with seeded random initial parameters.

    ``origin`` sets the initial output offset (the bias of Linear and
    Perceptron, the constant coefficient of Basis1D).
    """
    classes = {"linear": Linear, "perceptron": Perceptron, "basis1d": Basis1D}
    if family not in classes:
        raise ValueError(f"unknown embedding family {family!r}")
    base = classes[family](d, D, **hyper)
    if origin is not None:
        params = base.params
        key = {"linear": "b", "perceptron": "b_out"}.get(family)
        if key is None:
            params["C"][0] = origin
        else:
            params[key][:] = origin
        base = base.with_theta(base.flatten(params))
    return base.initialized(seed)


def embedding_from_dict(spec: dict) -> EmbeddingModel:
    spec = dict(spec)
    family = spec.pop("family")
    theta = np.asarray(spec.pop("theta"), dtype=float)
    if family == "linear":
        return Linear(spec["d"], spec["D"], theta)
    if family == "perceptron":
        return Perceptron(spec["d"], spec["D"], theta, hidden=tuple(spec["hidden"]), skip=spec["skip"])
    if family == "basis1d":
        return Basis1D(spec["d"], spec["D"], theta, degree=spec["degree"], scale=spec["scale"])
    raise ValueError(f"unknown embedding family {family!r}")


def fd_jacobian(model: EmbeddingModel, z, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian ``(N, D, d)`` of ``model.eval``."""
    z, _ = _latent_batch(z, model.d)
    cols = []
    for j in range(model.d):
        e = np.zeros(model.d)
        e[j] = h
        cols.append((model.eval(z + e).reshape(-1, model.D) - model.eval(z - e).reshape(-1, model.D)) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# injectivity diagnostics
# ---------------------------------------------------------------------------


def _segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between segments [p0, p1] and [q0, q1] in R^D."""
    u, v, w = p1 - p0, q1 - q0, p0 - q0
    a, b, c, d, e = u @ u, u @ v, v @ v, u @ w, v @ w
    den = a * c - b * b
    if den > 1e-14 * max(a * c, 1e-300):
        s = np.clip((b * e - c * d) / den, 0.0, 1.0)
    else:
        s = 0.0
    t = np.clip((b * s + e) / c, 0.0, 1.0) if c > 0 else 0.0
    s = np.clip((b * t - d) / a, 0.0, 1.0) if a > 0 else 0.0
    return float(np.linalg.norm(w + s * u - t * v))


def injectivity_probe(model: EmbeddingModel, prior, n: int = 200, seed: int = 0,
                      mass: float = 0.99, ambient_tol: float = 1e-3, latent_sep: float = 0.5) -> dict:
    """Look for distinct latent points that land (nearly) on the same ambient point.

    Latent separations are measured in units of the prior's standard
    deviation, ambient distances in units of the image diameter. For
    ``d = 1`` the image is a polyline over the central ``mass`` interval and
    every pair of non-adjacent segments is compared, so crossings between
    grid points are caught. For ``d = 2`` grid points are compared pairwise.
    """
    if model.d not in (1, 2):
        raise ValueError("injectivity probe supports d = 1 or d = 2")
    spread = float(np.mean(np.std(prior.sample(4096, seed), axis=0)))
    if model.d == 1:
        lo, hi = prior.central_interval(mass)
        grid = np.linspace(lo, hi, n)[:, None]
    else:
        m = max(int(round(math.sqrt(n))), 3)
        if hasattr(prior, "bounds"):
            (lo0, hi0), (lo1, hi1) = prior.bounds
        else:
            r = float(np.sqrt(-2.0 * np.log1p(-mass))) * spread
            lo0, hi0, lo1, hi1 = -r, r, -r, r
        g0, g1 = np.meshgrid(np.linspace(lo0, hi0, m), np.linspace(lo1, hi1, m), indexing="ij")
        grid = np.stack([g0.ravel(), g1.ravel()], axis=1)
    pts = model.eval(grid).reshape(len(grid), model.D)
    diam = float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1))) or 1.0
    lat = grid / spread
    flags = []
    min_ratio = np.inf
    if model.d == 1:
        zs = lat[:, 0]
        for i in range(len(pts) - 1):
            for j in range(i + 2, len(pts) - 1):
                lsep = zs[j] - zs[i]
                dist = _segment_distance(pts[i], pts[i + 1], pts[j], pts[j + 1]) / diam
                min_ratio = min(min_ratio, dist / lsep)
                if lsep > latent_sep and dist < ambient_tol:
                    flags.append({"z_a": float(grid[i, 0]), "z_b": float(grid[j, 0]), "ambient_distance": dist})
    else:
        dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1) / diam
        lsep = np.linalg.norm(lat[:, None, :] - lat[None, :, :], axis=-1)
        iu = np.triu_indices(len(pts), 1)
        min_ratio = float(np.min(dists[iu] / lsep[iu]))
        bad = (lsep[iu] > latent_sep) & (dists[iu] < ambient_tol)
        for a, b in zip(iu[0][bad], iu[1][bad]):
            flags.append({"z_a": grid[a].tolist(), "z_b": grid[b].tolist(), "ambient_distance": float(dists[a, b])})
    return {"min_distance_ratio": float(min_ratio), "suspected_self_intersections": flags}
