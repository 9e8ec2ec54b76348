"""Variational embeddings of data densities onto low-dimensional manifolds."""

from .errors import (
    ConfigError,
    CriticalPointError,
    DegenerateSpectrumError,
    IterateInvalid,
    NonSymmetricError,
    NotTraceableError,
    OptimizationFailed,
    RankDeficientError,
    TurningPoint,
    VarembedError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CriticalPointError",
    "DegenerateSpectrumError",
    "IterateInvalid",
    "NonSymmetricError",
    "NotTraceableError",
    "OptimizationFailed",
    "RankDeficientError",
    "TurningPoint",
    "VarembedError",
]
