"""Reverse-mode automatic differentiation over a dynamically recorded tape.

A :class:`Tape` stores an append-only list of nodes (operation kind, up to
two parent indices, value).  Values are float64 numpy arrays of any shape,
scalars included; programs are recorded eagerly through :class:`Var`
operator overloading and replay to exactly the values direct numpy
evaluation would give.  :func:`backward` runs reverse accumulation from a
scalar output to the designated inputs.

The tape is rebuilt per call — no graph caching.  Gradients of the tanh
activation reuse the forward value (1 - tanh^2); arcsin/arccos inputs are
clamped to [-1 + 1e-12, 1 - 1e-12] so their derivatives stay finite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, ScalarRequired, UnsupportedPrimitive

__all__ = [
    "Tape",
    "Var",
    "record",
    "backward",
    "grad_hamiltonian",
    "sqrt",
    "exp",
    "log",
    "tanh",
    "sin",
    "cos",
    "arcsin",
    "arccos",
    "minimum",
    "maximum",
    "vsum",
    "dot",
    "transpose",
]

# opcodes
_INPUT = 0
_CONST = 1
_ADD = 2
_SUB = 3
_MUL = 4
_DIV = 5
_NEG = 6
_POWC = 7
_SQRT = 8
_EXP = 9
_LOG = 10
_TANH = 11
_SIN = 12
_COS = 13
_ASIN = 14
_ACOS = 15
_MINC = 16
_MAXC = 17
_SUM = 18
_DOT = 19
_T = 20

_ASIN_CLIP = 1.0 - 1e-12


class Var:
    """Handle to one tape node; supports arithmetic with Vars and constants."""

    __slots__ = ("tape", "i", "value")

    def __init__(self, tape: "Tape", i: int, value):
        self.tape = tape
        self.i = i
        self.value = value

    # -- arithmetic -------------------------------------------------
    def __add__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_ADD, self.value + o.value, self.i, o.i)

    __radd__ = __add__

    def __sub__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_SUB, self.value - o.value, self.i, o.i)

    def __rsub__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_SUB, o.value - self.value, o.i, self.i)

    def __mul__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_MUL, self.value * o.value, self.i, o.i)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_DIV, self.value / o.value, self.i, o.i)

    def __rtruediv__(self, other):
        o = self.tape._lift(other)
        return self.tape._node(_DIV, o.value / self.value, o.i, self.i)

    def __neg__(self):
        return self.tape._node(_NEG, -np.asarray(self.value), self.i, -1)

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise UnsupportedPrimitive("power requires a constant exponent")
        c = float(exponent)
        return self.tape._node(_POWC, np.asarray(self.value) ** c, self.i, -1, c)

    def __abs__(self):
        raise UnsupportedPrimitive("abs is not a tape primitive; compose min/max with constants")

    def __matmul__(self, other):
        return dot(self, other)

    def __rmatmul__(self, other):
        return dot(other, self)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Append-only record of a differentiable program."""

    __slots__ = ("ops", "vals", "p1", "p2", "aux", "input_ids")

    def __init__(self):
        self.ops: list[int] = []
        self.vals: list = []
        self.p1: list[int] = []
        self.p2: list[int] = []
        self.aux: list = []
        self.input_ids: list[int] = []

    def __len__(self) -> int:
        return len(self.ops)

    def _node(self, op: int, value, i1: int, i2: int, aux=None) -> Var:
        s = value.sum() if isinstance(value, np.ndarray) else value
        # s != s catches NaN; the comparisons catch +/- infinity
        if s != s or s == np.inf or s == -np.inf:
            raise NonFiniteValue(f"non-finite value at node {len(self.ops)} (op {op})")
        self.ops.append(op)
        self.vals.append(value)
        self.p1.append(i1)
        self.p2.append(i2)
        self.aux.append(aux)
        return Var(self, len(self.ops) - 1, value)

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise UnsupportedPrimitive("cannot mix Vars from different tapes")
            return x
        return self.constant(x)

    def input(self, value) -> Var:
        """Designated differentiation input."""
        v = self._node(_INPUT, np.asarray(value, dtype=np.float64), -1, -1)
        self.input_ids.append(v.i)
        return v

    def constant(self, value) -> Var:
        return self._node(_CONST, np.asarray(value, dtype=np.float64), -1, -1)


def _unary(x: Var, op: int, value, aux=None) -> Var:
    return x.tape._node(op, value, x.i, -1, aux)


def sqrt(x: Var) -> Var:
    return _unary(x, _SQRT, np.sqrt(x.value))


def exp(x: Var) -> Var:
    return _unary(x, _EXP, np.exp(x.value))


def log(x: Var) -> Var:
    return _unary(x, _LOG, np.log(x.value))


def tanh(x: Var) -> Var:
    return _unary(x, _TANH, np.tanh(x.value))


def sin(x: Var) -> Var:
    return _unary(x, _SIN, np.sin(x.value))


def cos(x: Var) -> Var:
    return _unary(x, _COS, np.cos(x.value))


def arcsin(x: Var) -> Var:
    clipped = np.clip(x.value, -_ASIN_CLIP, _ASIN_CLIP)
    return _unary(x, _ASIN, np.arcsin(clipped), clipped)


def arccos(x: Var) -> Var:
    clipped = np.clip(x.value, -_ASIN_CLIP, _ASIN_CLIP)
    return _unary(x, _ACOS, np.arccos(clipped), clipped)


def minimum(x: Var, c) -> Var:
    """Element-wise min with a constant."""
    if isinstance(c, Var):
        raise UnsupportedPrimitive("minimum requires a constant bound")
    return _unary(x, _MINC, np.minimum(x.value, c), c)


def maximum(x: Var, c) -> Var:
    """Element-wise max with a constant."""
    if isinstance(c, Var):
        raise UnsupportedPrimitive("maximum requires a constant bound")
    return _unary(x, _MAXC, np.maximum(x.value, c), c)


def vsum(x: Var, axis=None) -> Var:
    return _unary(x, _SUM, np.sum(x.value, axis=axis), (np.shape(x.value), axis))


def transpose(x: Var) -> Var:
    return _unary(x, _T, np.transpose(x.value), None)


def dot(a, b) -> Var:
    """np.dot semantics: vector dot, matrix-vector, or matrix product."""
    if isinstance(a, Var):
        tape = a.tape
    elif isinstance(b, Var):
        tape = b.tape
    else:
        raise UnsupportedPrimitive("dot needs at least one Var operand")
    av = tape._lift(a)
    bv = tape._lift(b)
    try:
        value = np.dot(av.value, bv.value)
    except ValueError as exc:
        raise DimensionMismatch(f"dot: {np.shape(av.value)} . {np.shape(bv.value)}") from exc
    return tape._node(_DOT, value, av.i, bv.i)


def record(f: Callable, inputs: Sequence) -> tuple:
    """Run ``f`` over fresh tape inputs; returns (output(s), tape)."""
    tape = Tape()
    in_vars = [tape.input(x) for x in inputs]
    out = f(*in_vars)
    return out, tape


def _unbroadcast(g, shape) -> np.ndarray:
    if np.shape(g) == shape:
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if g.shape != shape:
        g = np.reshape(g, shape)
    return g


def backward(tape: Tape, output: Var) -> list[np.ndarray]:
    """Reverse accumulation from a scalar output.

    Returns one gradient per designated input (in tape.input() order);
    inputs the output does not depend on get zero gradients.
    """
    if output.tape is not tape:
        raise UnsupportedPrimitive("output does not belong to this tape")
    if np.size(output.value) != 1:
        raise ScalarRequired(f"backward needs a scalar output, got shape {np.shape(output.value)}")

    n = len(tape.ops)
    grads: list = [None] * n
    grads[output.i] = np.ones_like(np.asarray(output.value, dtype=np.float64))

    ops, vals, p1, p2, aux = tape.ops, tape.vals, tape.p1, tape.p2, tape.aux

    def acc(j: int, dg) -> None:
        dg = _unbroadcast(dg, np.shape(vals[j]))
        if grads[j] is None:
            grads[j] = dg
        else:
            grads[j] = grads[j] + dg

    for i in range(output.i, -1, -1):
        g = grads[i]
        if g is None:
            continue
        op = ops[i]
        if op == _INPUT or op == _CONST:
            continue
        a, b = p1[i], p2[i]
        if op == _DOT:
            av, bv = vals[a], vals[b]
            and_, bnd = np.ndim(av), np.ndim(bv)
            if and_ == 2 and bnd == 2:
                acc(a, g @ bv.T)
                acc(b, av.T @ g)
            elif and_ == 2 and bnd == 1:
                acc(a, np.outer(g, bv))
                acc(b, av.T @ g)
            elif and_ == 1 and bnd == 2:
                acc(a, bv @ g)
                acc(b, np.outer(av, g))
            else:
                acc(a, g * bv)
                acc(b, g * av)
        elif op == _ADD:
            acc(a, g)
            acc(b, g)
        elif op == _MUL:
            acc(a, g * vals[b])
            acc(b, g * vals[a])
        elif op == _SUB:
            acc(a, g)
            acc(b, -g)
        elif op == _TANH:
            acc(a, g * (1.0 - vals[i] * vals[i]))
        elif op == _NEG:
            acc(a, -g)
        elif op == _DIV:
            acc(a, g / vals[b])
            acc(b, -g * vals[i] / vals[b])
        elif op == _SUM:
            shape, axis = aux[i]
            if axis is None or shape == ():
                acc(a, np.broadcast_to(g, shape))
            else:
                acc(a, np.broadcast_to(np.expand_dims(g, axis), shape))
        elif op == _POWC:
            c = aux[i]
            acc(a, g * c * np.asarray(vals[a]) ** (c - 1.0))
        elif op == _SQRT:
            acc(a, g * 0.5 / vals[i])
        elif op == _EXP:
            acc(a, g * vals[i])
        elif op == _LOG:
            acc(a, g / vals[a])
        elif op == _SIN:
            acc(a, g * np.cos(vals[a]))
        elif op == _COS:
            acc(a, -g * np.sin(vals[a]))
        elif op == _ASIN:
            acc(a, g / np.sqrt(1.0 - aux[i] * aux[i]))
        elif op == _ACOS:
            acc(a, -g / np.sqrt(1.0 - aux[i] * aux[i]))
        elif op == _MINC:
            acc(a, g * (vals[a] <= aux[i]))
        elif op == _MAXC:
            acc(a, g * (vals[a] >= aux[i]))
        elif op == _T:
            acc(a, np.transpose(g))
        else:  # pragma: no cover - all opcodes enumerated above
            raise UnsupportedPrimitive(f"no backward rule for opcode {op}")

    out = []
    for j in tape.input_ids:
        g = grads[j]
        out.append(np.zeros_like(vals[j]) if g is None else np.asarray(g, dtype=np.float64))
    return out


def grad_hamiltonian(model, x: np.ndarray) -> np.ndarray:
    """Gradient [dH/dq, dH/dp] of a scalar energy model at phase point x.

    ``model`` must expose ``input_dim`` and ``build_energy(tape, x_var)``
    recording its energy as a function of the physical-units state.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise DimensionMismatch(f"grad_hamiltonian: state shape {x.shape} vs model dim {model.input_dim}")
    tape = Tape()
    xv = tape.input(x)
    energy = model.build_energy(tape, xv)
    return backward(tape, energy)[0]
