"""Strict experiment configuration files.

A configuration is a TOML document with the sections listed in ``SCHEMA``.
Every key has a type and a documented default; unknown sections or keys are
rejected with the offending line number before anything is computed.
Presets shipped with the package are ordinary configuration files and can be
referred to by name.
"""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .embedding import EmbeddingModel, make_embedding
from .errors import ConfigError
from .models import (
    DensityModel,
    GaussianMixture,
    IsotropicGaussian,
    MultivariateGaussian,
    PriorModel,
    Ring,
    SmoothedUniformBall,
    TruncatedExponential,
    UniformBox,
)
from .numerics import random_spd
from .objective import IntegrationConfig
from .optimizer import OptimizeConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REQUIRED = object()

# section -> key -> (type, default). ``None`` means "unset"; REQUIRED must be given.
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "density": {
        "kind": ("choice:gaussian|mixture|smoothed_ball|ring", REQUIRED),
        "mean": ("vector", None),  # gaussian; zeros when omitted
        "covariance": ("matrix", None),  # gaussian
        "random_dim": ("int", None),  # gaussian: seeded random SPD covariance instead
        "random_seed": ("int", None),
        "centers": ("matrix", None),  # mixture
        "variance": ("float", None),  # mixture, isotropic per component
        "weights": ("vector", None),  # mixture; equal when omitted
        "center": ("vector", None),  # smoothed_ball, ring
        "radius": ("float", None),  # smoothed_ball, ring
        "sharpness": ("float", None),  # smoothed_ball; 50 / radius when omitted
        "width": ("float", None),  # ring
    },
    "prior": {
        "kind": ("choice:gaussian|uniform|exponential", "gaussian"),
        "dim": ("int", 1),
        "sigma0": ("float", 1.0),
        "bounds": ("matrix", None),  # uniform, one [lo, hi] row per latent dimension
        "gamma": ("float", None),  # exponential
    },
    "embedding": {
        "family": ("choice:linear|perceptron|basis1d", "perceptron"),
        "hidden": ("ints", [32, 32]),
        "skip": ("bool", True),
        "degree": ("int", 5),
        "scale": ("float", 1.0),
        "origin": ("vector", None),
        "matrix": ("matrix", None),  # linear only: explicit starting matrix
    },
    "integration": {
        "scheme": ("choice:quadrature|monte-carlo", "quadrature"),
        "order": ("int", 16),
        "samples": ("int", 4096),
        "seed": ("int", 0),
    },
    "optimizer": {
        "method": ("choice:adam|gradient-ascent-with-backtracking", "adam"),
        "step_size": ("float", 1e-2),
        "max_iterations": ("int", 2000),
        "tail_iterations": ("int", 200),
        "grad_tol": ("float", 1e-6),
        "change_tol": ("float", 1e-13),
        "seed": ("int", 0),  # also seeds the embedding's initial parameters
        "restarts": ("int", 1),
        "repulsion": ("float", 0.0),
        "repulsion_length": ("float", 0.1),
    },
    "diagnostics": {
        "samples": ("int", 256),
        "seed": ("int", 0),
        "mass": ("float", 0.99),
        "angular": ("bool", False),
        "angular_mass": ("float", 0.9),
        "angular_center": ("vector", None),
        "el_points": ("int", 33),
        "energy_threshold": ("float", 1e-2),
        "el_threshold": ("float", 5e-2),
        "angular_threshold": ("float", 0.05),
        "converged_grad_norm": ("float", 1e-4),
    },
    "output": {
        "trace_csv": ("bool", True),
        "svg": ("bool", True),
        "svg_grid": ("int", 160),
        "curve_points": ("int", 401),
    },
    "dynamics": {
        "mode": ("choice:el|reparameterized", "el"),
        "phi0": ("vector", None),
        "p0": ("vector", None),  # exponential prior: s(phi0) / gamma when omitted
        "z_span": ("vector", None),
        "tau_span": ("vector", [0.0, 1.0]),
        "steps": ("int", None),  # 2000 per unit of span when omitted
        "transient_constants": ("float", 5.0),
        "convergence_check": ("bool", False),
    },
    "pca": {
        "angle_tol": ("float", 0.02),
        "singular_value_tol": ("float", 0.01),
        "fixed_point_tol": ("float", 1e-3),
        "objective_tol": ("float", 1e-3),
        "coefficient_ratio_tol": ("float", 1e-2),
    },
}

TOP_LEVEL = {"name": "str", "description": "str"}


def preset_names() -> list[str]:
    root = resources.files("varembed") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _read_source(source) -> tuple[str, str, str]:
    """(text, origin label, default name) for a path or a preset name."""
    path = Path(source)
    if path.is_file():
        return path.read_text(), str(path), path.stem
    name = str(source)
    candidate = resources.files("varembed") / "presets" / f"{name}.toml"
    if candidate.is_file():
        return candidate.read_text(), f"preset:{name}", name
    raise ConfigError(f"no such config file or preset: {source!r} (presets: {', '.join(preset_names())})")


def _locate(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the section header)."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return lineno
    return None


def _coerce(kind: str, value, where):
    def fail(expected):
        raise ConfigError(f"expected {expected}, got {value!r}", *where)

    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            fail("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind.startswith("choice:"):
        choices = kind[7:].split("|")
        if value not in choices:
            fail("one of " + ", ".join(choices))
        return value
    if kind == "ints":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            fail("a list of integers")
        return list(value)
    if kind == "vector":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            fail("a list of numbers")
        return [float(v) for v in value]
    if kind == "matrix":
        ok = isinstance(value, list) and value and all(
            isinstance(r, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in r) for r in value
        )
        if not ok or len({len(r) for r in value}) != 1:
            fail("a list of equal-length numeric rows")
        return [[float(v) for v in r] for r in value]
    raise AssertionError(kind)


@dataclass
class ExperimentConfig:
    sections: dict
    name: str
    origin: str
    text: str
    present: frozenset  # sections that appear in the file

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def has(self, section: str) -> bool:
        return section in self.present

    def error(self, message: str, section: str | None = None, key: str | None = None) -> ConfigError:
        line = _locate(self.text, section, key) if section else None
        return ConfigError(message, f"{section}.{key}" if key else section, line)

    def echo(self) -> dict:
        """Resolved configuration (defaults filled in) for result files."""
        return {"name": self.name, **{s: dict(v) for s, v in self.sections.items() if s in self.present}}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.sections["optimizer"]["seed"] = int(seed)
        return out


def parse_config(text: str, origin: str = "<string>", default_name: str = "run",
                 require: tuple[str, ...] = ()) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"{origin}: malformed config: {exc}", None, int(m.group(1)) if m else None) from exc

    sections: dict = {}
    name = default_name
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA:
                raise ConfigError(f"{origin}: unknown section [{key}] (allowed: {', '.join(SCHEMA)})", key,
                                  _locate(text, key, None))
            continue
        if key not in TOP_LEVEL:
            raise ConfigError(f"{origin}: unknown top-level key", key, _locate(text, None, key))
        value = _coerce(TOP_LEVEL[key], value, (key, _locate(text, None, key)))
        if key == "name":
            name = value

    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        resolved = {}
        for key, value in given.items():
            if key not in keys:
                raise ConfigError(f"{origin}: unknown key in [{section}] (allowed: {', '.join(keys)})",
                                  f"{section}.{key}", _locate(text, section, key))
            if isinstance(value, dict):
                raise ConfigError(f"{origin}: nested tables are not allowed", f"{section}.{key}",
                                  _locate(text, section, key))
            resolved[key] = _coerce(keys[key][0], value, (f"{section}.{key}", _locate(text, section, key)))
        for key, (_, default) in keys.items():
            if key not in resolved:
                if default is REQUIRED and section in raw:
                    raise ConfigError(f"{origin}: missing required key", f"{section}.{key}", _locate(text, section, None))
                resolved[key] = copy.deepcopy(default) if default is not REQUIRED else None
        sections[section] = resolved

    for section in require:
        if section not in raw:
            raise ConfigError(f"{origin}: missing section [{section}]", section)
    cfg = ExperimentConfig(sections, name, origin, text, frozenset(k for k, v in raw.items() if isinstance(v, dict)))
    _validate(cfg)
    return cfg


def load_config(source, require: tuple[str, ...] = ("density", "prior")) -> ExperimentConfig:
    text, origin, name = _read_source(source)
    return parse_config(text, origin, name, require)


# ---------------------------------------------------------------------------
# cross-section validation and model construction
# ---------------------------------------------------------------------------

_NEEDS = {
    "mixture": ("centers", "variance"),
    "smoothed_ball": ("center", "radius"),
    "ring": ("center", "radius", "width"),
}


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.has("density"):
        den = cfg["density"]
        for key in _NEEDS.get(den["kind"], ()):
            if den[key] is None:
                raise cfg.error(f"density kind {den['kind']!r} needs '{key}'", "density", "kind")
        if den["kind"] == "gaussian" and den["covariance"] is None and den["random_dim"] is None:
            raise cfg.error("gaussian density needs 'covariance' or 'random_dim'", "density", "kind")
    if cfg.has("prior"):
        pr = cfg["prior"]
        if pr["kind"] == "uniform" and pr["bounds"] is None:
            raise cfg.error("uniform prior needs 'bounds'", "prior", "kind")
        if pr["kind"] == "exponential" and pr["gamma"] is None:
            raise cfg.error("exponential prior needs 'gamma'", "prior", "kind")
    if cfg.has("density") and cfg.has("prior"):
        D, d = ambient_dim(cfg), latent_dim(cfg)
        emb = cfg["embedding"]
        if emb["family"] == "basis1d" and d != 1:
            raise cfg.error(f"basis1d needs a 1-dimensional prior, got dim {d}", "embedding", "family")
        if emb["origin"] is not None and len(emb["origin"]) != D:
            raise cfg.error(f"origin has {len(emb['origin'])} entries, density dimension is {D}", "embedding", "origin")
        if emb["matrix"] is not None and np.shape(emb["matrix"]) != (D, d):
            raise cfg.error(f"matrix must be {D}x{d}", "embedding", "matrix")
        if d > D:
            raise cfg.error(f"latent dimension {d} exceeds ambient dimension {D}", "prior", "dim")
    if cfg.has("dynamics"):
        dyn = cfg["dynamics"]
        if dyn["phi0"] is None:
            raise cfg.error("dynamics needs 'phi0'", "dynamics", None)
        if cfg.has("density") and len(dyn["phi0"]) != ambient_dim(cfg):
            raise cfg.error("phi0 dimension does not match the density", "dynamics", "phi0")
        if dyn["mode"] == "el" and dyn["z_span"] is None:
            raise cfg.error("el dynamics needs 'z_span'", "dynamics", "mode")
        for key in ("z_span", "tau_span"):
            if dyn[key] is not None and len(dyn[key]) != 2:
                raise cfg.error("span must have two entries", "dynamics", key)


def ambient_dim(cfg: ExperimentConfig) -> int:
    den = cfg["density"]
    if den["kind"] == "gaussian":
        return len(den["covariance"]) if den["covariance"] is not None else int(den["random_dim"])
    if den["kind"] == "mixture":
        return len(den["centers"][0])
    return len(den["center"])


def latent_dim(cfg: ExperimentConfig) -> int:
    pr = cfg["prior"]
    if pr["kind"] == "uniform":
        return len(pr["bounds"])
    if pr["kind"] == "exponential":
        return 1
    return int(pr["dim"])


def build_density(cfg: ExperimentConfig) -> DensityModel:
    den = cfg["density"]
    kind = den["kind"]
    try:
        if kind == "gaussian":
            if den["covariance"] is not None:
                cov = np.asarray(den["covariance"])
            else:
                cov = random_spd(int(den["random_dim"]), np.random.default_rng(den["random_seed"] or 0))
            mean = np.zeros(cov.shape[0]) if den["mean"] is None else den["mean"]
            return MultivariateGaussian(mean, cov)
        if kind == "mixture":
            centers = np.asarray(den["centers"])
            if den["weights"] is None:
                return GaussianMixture.equal(centers, den["variance"])
            return GaussianMixture(den["weights"], centers, den["variance"])
        if kind == "smoothed_ball":
            if den["sharpness"] is None:
                return SmoothedUniformBall(den["center"], den["radius"])
            return SmoothedUniformBall(den["center"], den["radius"], sharpness=den["sharpness"])
        return Ring(den["center"], den["radius"], den["width"])
    except ValueError as exc:
        raise cfg.error(str(exc), "density", "kind") from exc


def build_prior(cfg: ExperimentConfig) -> PriorModel:
    pr = cfg["prior"]
    try:
        if pr["kind"] == "gaussian":
            return IsotropicGaussian(pr["sigma0"], pr["dim"])
        if pr["kind"] == "uniform":
            return UniformBox(pr["bounds"])
        return TruncatedExponential(pr["gamma"])
    except ValueError as exc:
        raise cfg.error(str(exc), "prior", "kind") from exc


def build_embedding(cfg: ExperimentConfig) -> EmbeddingModel:
    emb = cfg["embedding"]
    d, D = latent_dim(cfg), ambient_dim(cfg)
    family = emb["family"]
    hyper = {}
    if family == "perceptron":
        hyper = {"hidden": tuple(emb["hidden"]), "skip": emb["skip"]}
    elif family == "basis1d":
        hyper = {"degree": emb["degree"], "scale": emb["scale"]}
    try:
        model = make_embedding(family, d, D, seed=cfg["optimizer"]["seed"], origin=emb["origin"], **hyper)
    except ValueError as exc:
        raise cfg.error(str(exc), "embedding", "family") from exc
    if family == "linear" and emb["matrix"] is not None:
        params = model.params
        params["A"] = np.asarray(emb["matrix"])
        model = model.with_theta(model.flatten(params))
    return model


def build_integration(cfg: ExperimentConfig) -> IntegrationConfig:
    i = cfg["integration"]
    try:
        return IntegrationConfig(i["scheme"], i["order"], i["samples"], i["seed"])
    except ValueError as exc:
        raise cfg.error(str(exc), "integration", None) from exc


def build_optimizer(cfg: ExperimentConfig) -> OptimizeConfig:
    try:
        return OptimizeConfig(**cfg["optimizer"])
    except ValueError as exc:
        raise cfg.error(str(exc), "optimizer", None) from exc
