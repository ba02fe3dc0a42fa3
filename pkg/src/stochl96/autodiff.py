"""Reverse-mode differentiation on a tape of vector-level primitives.

Values are NumPy arrays. A :class:`Var` is a handle to one tape node; the
module-level primitives accept any mix of ``Var`` and plain arrays and fall
back to ordinary NumPy evaluation when no ``Var`` is involved, so the same
model code serves both the recorded and the plain forward pass.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class TapeBudgetExceeded(RuntimeError):
    pass


class Tape:
    """Topologically ordered record of primitive evaluations.

    ``max_nodes`` bounds the number of recorded nodes (leaves included).
    Inputs of every ``abs`` node are kept in ``abs_inputs`` so callers can
    detect when a perturbation crosses a kink.
    """

    def __init__(self, max_nodes: int | None = None):
        self.max_nodes = max_nodes
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list = []
        self.shapes: list[tuple] = []
        self.abs_inputs: list[np.ndarray] = []

    def __len__(self):
        return len(self.ops)

    def counts(self) -> Counter:
        return Counter(self.ops)

    def record(self, op, value, parents=(), vjp=None) -> "Var":
        if self.max_nodes is not None and len(self.ops) >= self.max_nodes:
            raise TapeBudgetExceeded(f"tape node budget of {self.max_nodes} nodes exceeded")
        value = np.asarray(value, dtype=np.float64)
        self.ops.append(op)
        self.parents.append(tuple(parents))
        self.vjps.append(vjp)
        self.shapes.append(value.shape)
        return Var(self, len(self.ops) - 1, value)

    def variable(self, value) -> "Var":
        return self.record("leaf", np.array(value, dtype=np.float64))

    def backward(self, root: "Var") -> list:
        """Adjoint of every node with respect to the scalar ``root``."""
        if root.tape is not self:
            raise ValueError("root belongs to another tape")
        if root.value.size != 1:
            raise ValueError("backward needs a scalar root")
        adj: list = [None] * len(self.ops)
        adj[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            g = adj[i]
            if g is None or not self.parents[i]:
                continue
            for p, gp in zip(self.parents[i], self.vjps[i](g)):
                adj[p] = gp if adj[p] is None else adj[p] + gp
        return adj

    def gradient(self, root: "Var", wrt) -> list[np.ndarray]:
        adj = self.backward(root)
        return [np.zeros(self.shapes[v.index]) if adj[v.index] is None else np.asarray(adj[v.index])
                for v in wrt]


class Var:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a recorded value is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = a.tape
    return tape


def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op, x, y, out, dx, dy):
    tape = _tape_of(x, y)
    if tape is None:
        return out
    xv, yv = value(x), value(y)
    parents, pulls = [], []
    if isinstance(x, Var):
        parents.append(x.index)
        pulls.append(lambda g: _unbroadcast(dx(g), xv.shape))
    if isinstance(y, Var):
        parents.append(y.index)
        pulls.append(lambda g: _unbroadcast(dy(g), yv.shape))
    return tape.record(op, out, parents, lambda g: [pull(g) for pull in pulls])


def _unary(op, x, out, dx):
    if not isinstance(x, Var):
        return out
    return x.tape.record(op, out, (x.index,), lambda g: [dx(g)])


def add(x, y):
    return _binary("add", x, y, value(x) + value(y), lambda g: g, lambda g: g)


def sub(x, y):
    return _binary("sub", x, y, value(x) - value(y), lambda g: g, lambda g: -g)


def mul(x, y):
    xv, yv = value(x), value(y)
    return _binary("mul", x, y, xv * yv, lambda g: g * yv, lambda g: g * xv)


def square(x):
    xv = value(x)
    return _unary("square", x, xv * xv, lambda g: 2.0 * xv * g)


def absolute(x):
    xv = value(x)
    if isinstance(x, Var):
        x.tape.abs_inputs.append(xv)
    # subgradient 0 at the kink
    return _unary("abs", x, np.abs(xv), lambda g: g * np.sign(xv))


def transpose(x):
    xv = value(x)
    if xv.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _unary("transpose", x, xv.T, lambda g: g.T)


def reshape(x, shape):
    xv = value(x)
    return _unary("reshape", x, xv.reshape(shape), lambda g: g.reshape(xv.shape))


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    xv = value(x)
    out = xv.sum(axis=axis)

    def dx(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return _unary("sum", x, out, dx)


def matmul(x, y):
    """``x @ y`` with ``y`` a vector or matrix and ``x`` of any rank >= 1."""
    xv, yv = value(x), value(y)
    if yv.ndim not in (1, 2):
        raise ValueError("right operand must be a vector or a matrix")
    out = xv @ yv

    if yv.ndim == 2:
        def dx(g):
            return g @ yv.T

        def dy(g):
            return xv.reshape(-1, xv.shape[-1]).T @ np.asarray(g).reshape(-1, yv.shape[1]) \
                if xv.ndim > 1 else np.outer(xv, g)
    else:
        def dx(g):
            return np.asarray(g)[..., None] * yv

        def dy(g):
            return (xv * np.asarray(g)[..., None]).reshape(-1, yv.shape[0]).sum(axis=0)

    return _binary("matmul", x, y, out, dx, dy)


def l96_drift(x, F: float):
    """Cyclic single-scale tendency ``-x[k-1](x[k-2] - x[k+1]) - x[k] + F`` along the last axis."""
    xv = value(x)
    xm1 = np.roll(xv, 1, axis=-1)
    xm2 = np.roll(xv, 2, axis=-1)
    xp1 = np.roll(xv, -1, axis=-1)
    out = xm1 * (xp1 - xm2) - xv + F

    def dx(g):
        gm = g * xm1
        return (np.roll(g * (xp1 - xm2), -1, axis=-1) + np.roll(gm, 1, axis=-1)
                - np.roll(gm, -2, axis=-1) - g)

    return _unary("l96", x, out, dx)


def backward(tape: Tape, root: Var, wrt) -> list[np.ndarray]:
    """Gradients of scalar ``root`` with respect to the leaves ``wrt``."""
    return tape.gradient(root, wrt)


# -- flattened parameter views ----------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Stable map between named parameter blocks and one flat vector."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...] = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        offsets, pos = [], 0
        for shape in self.shapes:
            offsets.append(pos)
            pos += int(np.prod(shape, dtype=int))
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "size", pos)

    @classmethod
    def of(cls, params: dict) -> "ParamLayout":
        return cls(tuple(params), tuple(np.shape(v) for v in params.values()))

    def flatten(self, params: dict) -> np.ndarray:
        if tuple(params) != self.names:
            raise ValueError(f"parameter names {tuple(params)} do not match layout {self.names}")
        out = np.empty(self.size)
        for name, shape, off in zip(self.names, self.shapes, self.offsets):
            v = np.asarray(params[name], dtype=np.float64)
            if v.shape != shape:
                raise ValueError(f"{name} has shape {v.shape}, layout expects {shape}")
            out[off:off + v.size] = v.ravel()
        return out

    def unflatten(self, vec) -> dict:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {vec.shape}")
        return {name: vec[off:off + int(np.prod(shape, dtype=int))].reshape(shape).copy()
                for name, shape, off in zip(self.names, self.shapes, self.offsets)}

    def locate(self, index: int) -> tuple[str, tuple[int, ...]]:
        """Block name and in-block index of flat coordinate ``index``."""
        for name, shape, off in zip(self.names, self.shapes, self.offsets):
            n = int(np.prod(shape, dtype=int))
            if off <= index < off + n:
                return name, tuple(int(i) for i in np.unravel_index(index - off, shape))
        raise IndexError(index)


def record(fn, layout: ParamLayout, theta, max_nodes: int | None = None):
    """Evaluate ``fn(params)`` on a fresh tape with ``theta`` as leaves.

    Returns ``(loss, tape, root, leaves)``.
    """
    tape = Tape(max_nodes)
    leaves = {name: tape.variable(v) for name, v in layout.unflatten(theta).items()}
    root = fn(leaves)
    if not isinstance(root, Var):
        raise ValueError("function does not depend on the parameters")
    return float(root.value), tape, root, leaves


def value_and_grad(fn, layout: ParamLayout, theta, max_nodes: int | None = None):
    """Loss and flat gradient of ``fn`` at ``theta``."""
    loss, tape, root, leaves = record(fn, layout, theta, max_nodes)
    grads = tape.gradient(root, list(leaves.values()))
    return loss, layout.flatten(dict(zip(leaves, grads)))


# -- finite-difference verification ------------------------------------------

def kink_detector(fn, layout: ParamLayout):
    """``kink(theta_a, theta_b)`` for :func:`check_gradient`.

    True when any recorded ``abs`` input changes sign between the two
    parameter vectors, i.e. the difference quotient straddles a kink.
    """
    def signs(theta):
        _, tape, _, _ = record(fn, layout, theta)
        return [np.sign(v) for v in tape.abs_inputs]

    def kink(ta, tb):
        sa, sb = signs(ta), signs(tb)
        return len(sa) != len(sb) or any(not np.array_equal(a, b) for a, b in zip(sa, sb))
    return kink


@dataclass
class GradientCheck:
    max_rel_error: float
    errors: dict
    excluded: list

    @property
    def checked(self) -> int:
        return len(self.errors)


def check_gradient(f, grad, theta, h: float = 1e-5, coords=None, kink=None) -> GradientCheck:
    """Compare ``grad`` against central differences of ``f`` on ``coords``.

    ``kink(theta_plus, theta_minus)`` returns True when the segment crosses
    a non-differentiable point; such coordinates are reported as excluded.
    The relative error divides by ``max(|grad|, |fd|)`` and falls back to the
    absolute error when both are below 1e-12.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    coords = range(theta.size) if coords is None else coords
    errors, excluded = {}, []
    for i in coords:
        e = np.zeros_like(theta)
        e[i] = h
        tp, tm = theta + e, theta - e
        if kink is not None and kink(tp, tm):
            excluded.append(int(i))
            continue
        fd = (f(tp) - f(tm)) / (2.0 * h)
        scale = max(abs(grad[i]), abs(fd))
        diff = abs(grad[i] - fd)
        errors[int(i)] = diff / scale if scale > 1e-12 else diff
    worst = max(errors.values()) if errors else 0.0
    return GradientCheck(float(worst), errors, excluded)
