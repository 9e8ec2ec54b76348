"""Reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects.
:func:`grad_of_scalar` then sweeps the tape backwards once and returns the
exact gradient of a scalar output with respect to a parameter vector.

The free functions in this module (``tanh``, ``log``, ``einsum``, ...) accept
either plain arrays or ``Var`` objects, so model code can be written once and
evaluated with or without recording.

    >>> tape = Tape()
    >>> theta = tape.variable([3.0])
    >>> y = (theta * theta).sum()
    >>> grad_of_scalar(tape, y, theta)
    array([6.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NotTraceableError


class Tape:
    """Append-only record of operations (the ``DualTape`` of the docs)."""

    def __init__(self):
        self._nodes: list[Var] = []

    def variable(self, value) -> "Var":
        return Var(np.array(value, dtype=float), self, ())

    def _register(self, var: "Var") -> int:
        self._nodes.append(var)
        return len(self._nodes) - 1

    def __len__(self) -> int:
        return len(self._nodes)


class Var:
    """An array value recorded on a tape.

    ``parents`` holds ``(parent, vjp)`` pairs, where ``vjp`` maps the
    gradient of this node to the gradient contribution for ``parent``.
    """

    __slots__ = ("value", "tape", "parents", "index")
    __array_priority__ = 1000  # make ndarray <op> Var defer to Var

    def __init__(self, value: np.ndarray, tape: Tape, parents):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.index = tape._register(self)

    # -- introspection ---------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self, other, np.divide,
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
        )

    def __rtruediv__(self, other):
        return _binary(
            other, self, np.divide,
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
        )

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __pow__(self, k):
        if isinstance(k, Var):
            raise TypeError("only constant exponents are supported")
        k = float(k)
        x = self.value
        return _unary(self, x**k, lambda g: g * k * x ** (k - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, key, g)
            return out

        return _unary(self, self.value[key], vjp)

    # -- shape -----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return _unary(self, self.value.reshape(shape), lambda g: g.reshape(old))

    def swapaxes(self, a, b):
        return _unary(self, np.swapaxes(self.value, a, b), lambda g: np.swapaxes(g, a, b))

    @property
    def T(self):
        return _unary(self, self.value.T, lambda g: g.T)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# graph construction helpers
# ---------------------------------------------------------------------------


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _unary(x: Var, value, vjp) -> Var:
    return Var(np.asarray(value, dtype=float), x.tape, ((x, vjp),))


def _binary(a, b, fn, da, db):
    av, bv = _val(a), _val(b)
    out = fn(av, bv)
    parents = []
    tape = None
    if isinstance(a, Var):
        tape = a.tape
        parents.append((a, lambda g: _unbroadcast(da(g, av, bv), av.shape)))
    if isinstance(b, Var):
        tape = tape or b.tape
        if isinstance(a, Var) and a.tape is not b.tape:
            raise ValueError("operands recorded on different tapes")
        parents.append((b, lambda g: _unbroadcast(db(g, av, bv), bv.shape)))
    return Var(np.asarray(out, dtype=float), tape, tuple(parents))


def primitive(value, parents: Sequence[tuple[object, Callable]]):
    """Record a custom operation.

    ``parents`` lists ``(input, vjp)`` pairs; inputs that are not ``Var``
    are treated as constants and skipped. When no input is recorded the
    plain value is returned.
    """
    recorded = [(p, f) for p, f in parents if isinstance(p, Var)]
    if not recorded:
        return np.asarray(value, dtype=float)
    return Var(np.asarray(value, dtype=float), recorded[0][0].tape, tuple(recorded))


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> np.ndarray:
    return _val(x)


# ---------------------------------------------------------------------------
# differentiable functions (accept arrays or Vars)
# ---------------------------------------------------------------------------


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul on the tape requires operands with ndim >= 2")
    out = av @ bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    return primitive(
        out,
        [
            (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
            (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)),
        ],
    )


def einsum(subscripts: str, a, b):
    """Two-operand ``numpy.einsum`` with explicit output subscripts.

    Every index of an operand must appear either in the other operand or in
    the output (no index private to a single operand and summed away).
    """
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        for ch in own:
            if ch not in other and ch not in out:
                raise ValueError(f"index '{ch}' is summed within a single operand")
    av, bv = _val(a), _val(b)
    res = np.einsum(subscripts, av, bv)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return res
    return primitive(
        res,
        [
            (a, lambda g: np.einsum(f"{out},{sb}->{sa}", g, bv)),
            (b, lambda g: np.einsum(f"{out},{sa}->{sb}", g, av)),
        ],
    )


def sum_(x, axis=None, keepdims=False):
    v = _val(x)
    out = np.sum(v, axis=axis, keepdims=keepdims)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, v.shape).copy()

    return _unary(x, out, vjp)


def _elementwise(fn, dfn):
    def op(x):
        v = _val(x)
        out = fn(v)
        if not isinstance(x, Var):
            return out
        return _unary(x, out, lambda g: g * dfn(v, out))

    return op


tanh = _elementwise(np.tanh, lambda v, out: 1.0 - out * out)
exp = _elementwise(np.exp, lambda v, out: out)
log = _elementwise(np.log, lambda v, out: 1.0 / v)
sqrt = _elementwise(np.sqrt, lambda v, out: 0.5 / out)
softplus = _elementwise(lambda v: np.logaddexp(0.0, v), lambda v, out: 0.5 * (1.0 + np.tanh(0.5 * v)))
square = _elementwise(np.square, lambda v, out: 2.0 * v)


def logsumexp(x, axis=-1):
    v = _val(x)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(v - m), axis=axis, keepdims=True)
    out_k = np.log(s) + m
    out = np.squeeze(out_k, axis=axis)
    if not isinstance(x, Var):
        return out
    soft = np.exp(v - out_k)
    return _unary(x, out, lambda g: np.expand_dims(g, axis) * soft)


def broadcast_to(x, shape):
    v = _val(x)
    out = np.broadcast_to(v, shape).copy()
    if not isinstance(x, Var):
        return out
    return _unary(x, out, lambda g: _unbroadcast(g, v.shape))


def half_logdet_gram_batch(J):
    """``0.5 log det(J^T J)`` for a batch ``(N, D, d)``; derivative is ``(J^+)^T``."""
    from .linalg import _gram_check

    Jv = _val(J)
    G = np.swapaxes(Jv, -1, -2) @ Jv
    _gram_check(G)
    L = np.linalg.cholesky(G)
    out = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    if not isinstance(J, Var):
        return out

    def vjp(g):
        pinv = np.linalg.solve(G, np.swapaxes(Jv, -1, -2))  # (N, d, D)
        return g[..., None, None] * np.swapaxes(pinv, -1, -2)

    return _unary(J, out, vjp)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------


def grad_of_scalar(tape: Tape, output, params: Var) -> np.ndarray:
    """Exact gradient of the scalar ``output`` with respect to ``params``."""
    if not isinstance(output, Var) or output.tape is not tape:
        raise NotTraceableError("output was not recorded on this tape")
    if not isinstance(params, Var) or params.tape is not tape:
        raise NotTraceableError("params were not recorded on this tape")
    if output.value.size != 1:
        raise ValueError(f"output must be scalar, got shape {output.value.shape}")

    grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    nodes = tape._nodes
    for idx in range(output.index, params.index - 1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        if idx == params.index:
            return np.array(g, dtype=float).reshape(params.value.shape)
        for parent, vjp in nodes[idx].parents:
            contrib = vjp(g)
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + contrib
            else:
                grads[parent.index] = contrib
    raise NotTraceableError("output does not depend on the given parameters")
