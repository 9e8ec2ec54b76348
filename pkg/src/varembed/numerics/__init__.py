from .linalg import (
    half_logdet_gram,
    pseudoinverse,
    random_orthogonal,
    random_spd,
    sym_eigendecomp,
)
from .quadrature import (
    QuadratureRule,
    gauss_hermite_rule,
    gauss_laguerre_rule,
    gauss_legendre_rule,
    monte_carlo_rule,
)
from .tape import Tape, Var, grad_of_scalar

DualTape = Tape

__all__ = [
    "DualTape",
    "QuadratureRule",
    "Tape",
    "Var",
    "gauss_hermite_rule",
    "gauss_laguerre_rule",
    "gauss_legendre_rule",
    "grad_of_scalar",
    "half_logdet_gram",
    "monte_carlo_rule",
    "pseudoinverse",
    "random_orthogonal",
    "random_spd",
    "sym_eigendecomp",
]
