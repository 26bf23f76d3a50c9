"""Operator-overloading automatic differentiation.

Two carriers are provided:

* :class:`Dual` propagates a tangent alongside the primal value (forward mode).
* :class:`Var` records every primitive on a :class:`Tape`; a single backward
  sweep then yields adjoints for all inputs (reverse mode).

Both carriers wrap either a Python float or a numpy array, so a whole array
expression counts as one primitive.  Code that should be differentiable is
written against the module-level functions (``exp``, ``log``, ``where``,
``maximum``, ``sum`` ...), which dispatch on the argument type and fall back
to numpy for plain numbers.  The primal is always computed with the same numpy
call regardless of carrier, so tracing never changes primal results.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dual",
    "Var",
    "Tape",
    "TraceError",
    "primal",
    "is_traced",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "absolute",
    "power",
    "where",
    "maximum",
    "minimum",
    "clamp_below",
    "sum",
    "dot",
    "pad",
    "stack",
    "concatenate",
    "reshape",
    "forward_directional",
    "reverse_gradient",
    "jacobian",
]


class TraceError(TypeError):
    """Raised when a traced program uses an unsupported operation."""


def primal(x):
    """Strip any derivative information."""
    if isinstance(x, (Dual, Var)):
        return x.value
    return x


def is_traced(x) -> bool:
    return isinstance(x, (Dual, Var))


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# forward mode


class Dual:
    """Primal value paired with a tangent of the same shape."""

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None

    def __init__(self, value, tangent=None):
        if isinstance(value, (Dual, Var)):
            raise TraceError("nested derivative carriers are not supported")
        self.value = value
        self.tangent = np.zeros_like(value, dtype=float) if tangent is None else tangent

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"

    @property
    def shape(self):
        return np.shape(self.value)

    def __len__(self):
        return len(self.value)

    def __getitem__(self, idx):
        return Dual(self.value[idx], self.tangent[idx])

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        _check_plain(other)
        return Dual(self.value + other, self.tangent + np.zeros_like(other, dtype=float))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        _check_plain(other)
        return Dual(self.value - other, self.tangent + np.zeros_like(other, dtype=float))

    def __rsub__(self, other):
        _check_plain(other)
        return Dual(other - self.value, -self.tangent + np.zeros_like(other, dtype=float))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.tangent * other.value + self.value * other.tangent,
            )
        _check_plain(other)
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            out = self.value / other.value
            return Dual(out, (self.tangent - out * other.tangent) / other.value)
        _check_plain(other)
        return Dual(self.value / other, self.tangent / other)

    def __rtruediv__(self, other):
        _check_plain(other)
        out = other / self.value
        return Dual(out, -out * self.tangent / self.value)

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __pos__(self):
        return self

    def __pow__(self, p):
        return power(self, p)

    def __abs__(self):
        return absolute(self)

    # comparisons act on the primal only
    def __lt__(self, other):
        return self.value < primal(other)

    def __le__(self, other):
        return self.value <= primal(other)

    def __gt__(self, other):
        return self.value > primal(other)

    def __ge__(self, other):
        return self.value >= primal(other)

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# reverse mode


class Tape:
    """Ordered record of primitives.

    Each entry holds the operand node indices and one vector-Jacobian
    product per operand, so that entries are already in topological order.
    """

    def __init__(self):
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[tuple[Callable, ...]] = []
        self.shapes: list[tuple] = []
        self.inputs: list[int] = []

    def __len__(self):
        return len(self.parents)

    def _push(self, value, parents=(), vjps=()) -> "Var":
        self.parents.append(parents)
        self.vjps.append(vjps)
        self.shapes.append(np.shape(value))
        return Var(value, self, len(self.parents) - 1)

    def variable(self, value) -> "Var":
        """Register an independent input."""
        v = self._push(np.asarray(value, dtype=float) if np.ndim(value) else float(value))
        self.inputs.append(v.index)
        return v

    def backward(self, output: "Var", keep: Sequence[int] | None = None, seed=1.0) -> dict:
        """Propagate adjoints from ``output``.

        Returns the adjoints of the nodes listed in ``keep`` (default: the
        registered inputs); intermediate adjoints are released as soon as
        they have been consumed.
        """
        if output.tape is not self:
            raise TraceError("output was recorded on a different tape")
        keep = set(self.inputs if keep is None else keep)
        adj: list = [None] * len(self.parents)
        adj[output.index] = np.broadcast_to(np.asarray(seed, dtype=float), self.shapes[output.index]).copy()
        for k in range(output.index, -1, -1):
            g = adj[k]
            if g is None:
                continue
            for p, vjp in zip(self.parents[k], self.vjps[k]):
                contrib = _unbroadcast(vjp(g), self.shapes[p])
                if adj[p] is None:
                    adj[p] = contrib
                else:
                    adj[p] = adj[p] + contrib
            if k not in keep:
                adj[k] = None
        return {k: adj[k] for k in keep}

    def gradient(self, output: "Var", inputs: Sequence["Var"]) -> list:
        adj = self.backward(output, keep=[v.index for v in inputs])
        out = []
        for v in inputs:
            g = adj[v.index]
            out.append(np.zeros(self.shapes[v.index]) if g is None else g)
        return out


class Var:
    """Value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None

    def __init__(self, value, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self):
        return f"Var({self.value!r}, #{self.index})"

    @property
    def shape(self):
        return np.shape(self.value)

    def __len__(self):
        return len(self.value)

    def __getitem__(self, idx):
        shape = np.shape(self.value)

        def vjp(g):
            out = np.zeros(shape)
            out[idx] = g
            return out

        return self.tape._push(self.value[idx], (self.index,), (vjp,))

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise TraceError("operands recorded on different tapes")
            return other
        if isinstance(other, Dual):
            raise TraceError("cannot mix forward and reverse carriers")
        _check_plain(other)
        return None

    def __add__(self, other):
        o = self._lift(other)
        if o is None:
            return self.tape._push(self.value + other, (self.index,), (_identity,))
        return self.tape._push(self.value + o.value, (self.index, o.index), (_identity, _identity))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        if o is None:
            return self.tape._push(self.value - other, (self.index,), (_identity,))
        return self.tape._push(self.value - o.value, (self.index, o.index), (_identity, np.negative))

    def __rsub__(self, other):
        self._lift(other)
        return self.tape._push(other - self.value, (self.index,), (np.negative,))

    def __mul__(self, other):
        o = self._lift(other)
        a = self.value
        if o is None:
            return self.tape._push(a * other, (self.index,), (lambda g: g * other,))
        b = o.value
        return self.tape._push(a * b, (self.index, o.index), (lambda g: g * b, lambda g: g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        a = self.value
        if o is None:
            return self.tape._push(a / other, (self.index,), (lambda g: g / other,))
        b = o.value
        out = a / b
        return self.tape._push(out, (self.index, o.index), (lambda g: g / b, lambda g: -g * out / b))

    def __rtruediv__(self, other):
        self._lift(other)
        b = self.value
        out = other / b
        return self.tape._push(out, (self.index,), (lambda g: -g * out / b,))

    def __neg__(self):
        return self.tape._push(-self.value, (self.index,), (np.negative,))

    def __pos__(self):
        return self

    def __pow__(self, p):
        return power(self, p)

    def __abs__(self):
        return absolute(self)

    def __lt__(self, other):
        return self.value < primal(other)

    def __le__(self, other):
        return self.value <= primal(other)

    def __gt__(self, other):
        return self.value > primal(other)

    def __ge__(self, other):
        return self.value >= primal(other)

    def __float__(self):
        return float(self.value)


def _identity(g):
    return g


def _check_plain(x):
    if not isinstance(x, (int, float, np.ndarray, np.floating, np.integer)):
        raise TraceError(f"unsupported operand type {type(x).__name__}")


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


# ---------------------------------------------------------------------------
# generic primitives


def _unary(x, f, dfdx):
    """Apply ``f`` with derivative ``dfdx(x_value, f_value)``."""
    if type(x) is float or type(x) is np.float64:
        return f(x)
    if isinstance(x, Dual):
        out = f(x.value)
        return Dual(out, dfdx(x.value, out) * x.tangent)
    if isinstance(x, Var):
        v = x.value
        out = f(v)
        d = dfdx(v, out)
        return x.tape._push(out, (x.index,), (lambda g: g * d,))
    if isinstance(x, (list, tuple)):
        raise TraceError("sequence inputs must be converted to arrays first")
    return f(x)


def exp(x):
    return _unary(x, np.exp, lambda v, out: out)


def log(x):
    return _unary(x, np.log, lambda v, out: 1.0 / v)


def sin(x):
    return _unary(x, np.sin, lambda v, out: np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda v, out: -np.sin(v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, out: 0.5 / out)


def absolute(x):
    # sign(0) = 0 would kill the derivative at the kink; take the +branch
    return _unary(x, np.abs, lambda v, out: np.where(v >= 0, 1.0, -1.0))


def power(x, p):
    """``x ** p`` for a constant exponent (scalar or array) or a traced one.

    A traced exponent is expanded as ``exp(p * log(x))``.
    """
    if is_traced(p):
        return exp(p * log(x))
    p = np.asarray(p, dtype=float) if np.ndim(p) else p
    if isinstance(x, (Dual, Var)):
        return _unary(x, lambda v: np.power(v, p), lambda v, out: p * np.power(v, p - 1))
    return np.power(x, p)


def where(cond, a, b):
    """Elementwise select; ``cond`` is evaluated on primal values only."""
    cond = np.asarray(primal(cond), dtype=bool)
    av, bv = primal(a), primal(b)
    out = np.where(cond, av, bv)
    if isinstance(a, Dual) or isinstance(b, Dual):
        ta = a.tangent if isinstance(a, Dual) else 0.0
        tb = b.tangent if isinstance(b, Dual) else 0.0
        return Dual(out, np.where(cond, ta, tb) + np.zeros_like(out, dtype=float))
    tape = _tape_of(a, b)
    if tape is None:
        return out
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        vjps.append(lambda g: np.where(cond, g, 0.0))
    if isinstance(b, Var):
        parents.append(b.index)
        vjps.append(lambda g: np.where(cond, 0.0, g))
    return tape._push(out, tuple(parents), tuple(vjps))


def maximum(a, b):
    """Elementwise max; ties go to ``a``."""
    return where(primal(a) >= primal(b), a, b)


def minimum(a, b):
    """Elementwise min; ties go to ``a``."""
    return where(primal(a) <= primal(b), a, b)


def clamp_below(x, threshold, fill=0.0):
    """Replace entries ``<= threshold`` by the constant ``fill``."""
    return where(primal(x) > threshold, x, fill)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    if isinstance(x, Dual):
        return Dual(np.sum(x.value, axis=axis), np.sum(x.tangent, axis=axis))
    if isinstance(x, Var):
        shape = np.shape(x.value)

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return x.tape._push(np.sum(x.value, axis=axis), (x.index,), (vjp,))
    return np.sum(x, axis=axis)


def dot(a, b):
    """Inner product of two 1D vectors (either may be traced)."""
    return sum(a * b)


def pad(x, width: int, axis: int):
    """Zero-pad ``width`` cells on both ends of ``axis``."""
    widths = [(0, 0)] * np.ndim(primal(x))
    widths[axis] = (width, width)
    if isinstance(x, Dual):
        return Dual(np.pad(x.value, widths), np.pad(x.tangent, widths))
    if isinstance(x, Var):
        n = np.shape(x.value)[axis]
        sl = [slice(None)] * np.ndim(x.value)
        sl[axis] = slice(width, width + n)
        sl = tuple(sl)
        return x.tape._push(np.pad(x.value, widths), (x.index,), (lambda g: g[sl],))
    return np.pad(x, widths)


def stack(items):
    """Stack scalars/arrays along a new leading axis."""
    vals = [primal(v) for v in items]
    out = np.stack(vals)
    if any(isinstance(v, Dual) for v in items):
        tans = [v.tangent if isinstance(v, Dual) else np.zeros_like(vals[i], dtype=float) for i, v in enumerate(items)]
        return Dual(out, np.stack(tans))
    tape = _tape_of(*items)
    if tape is None:
        return out
    parents, vjps = [], []
    for i, v in enumerate(items):
        if isinstance(v, Var):
            parents.append(v.index)
            vjps.append(lambda g, i=i: g[i])
    return tape._push(out, tuple(parents), tuple(vjps))


def reshape(x, shape):
    if isinstance(x, Dual):
        return Dual(np.reshape(x.value, shape), np.reshape(x.tangent, shape))
    if isinstance(x, Var):
        old = np.shape(x.value)
        return x.tape._push(np.reshape(x.value, shape), (x.index,), (lambda g: np.reshape(g, old),))
    return np.reshape(x, shape)


def concatenate(items, axis: int = 0):
    """Join arrays along an existing axis."""
    vals = [np.asarray(primal(v)) for v in items]
    out = np.concatenate(vals, axis=axis)
    if any(isinstance(v, Dual) for v in items):
        tans = [v.tangent if isinstance(v, Dual) else np.zeros_like(vals[i], dtype=float) for i, v in enumerate(items)]
        return Dual(out, np.concatenate(tans, axis=axis))
    tape = _tape_of(*items)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents, vjps = [], []
    for i, v in enumerate(items):
        if isinstance(v, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parents.append(v.index)
            vjps.append(lambda g, sl=tuple(sl): g[sl])
    return tape._push(out, tuple(parents), tuple(vjps))


# ---------------------------------------------------------------------------
# drivers


def _as_outputs(y):
    if isinstance(y, (list, tuple)):
        return list(y)
    return [y]


def forward_directional(fn, x, direction):
    """Evaluate ``fn(*x)`` once with dual inputs seeded along ``direction``.

    Returns ``(outputs, derivatives)`` as float arrays; each derivative is the
    directional derivative of the matching output.
    """
    x = np.asarray(x, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if x.shape != direction.shape:
        raise ValueError("direction must match the input shape")
    args = [Dual(float(xi), float(di)) for xi, di in zip(x, direction)]
    ys = _as_outputs(fn(*args))
    vals = np.array([float(primal(y)) for y in ys])
    ders = np.array([float(y.tangent) if isinstance(y, Dual) else 0.0 for y in ys])
    return vals, ders


def reverse_gradient(fn, x):
    """Record ``fn(*x)`` on a fresh tape and back-propagate.

    ``fn`` must return a single scalar.  Returns ``(value, gradient)``.
    """
    x = np.asarray(x, dtype=float)
    tape = Tape()
    args = [tape.variable(float(xi)) for xi in x]
    y = fn(*args)
    if isinstance(y, (list, tuple)):
        if len(y) != 1:
            raise ValueError("reverse_gradient needs a single scalar output; call once per output")
        y = y[0]
    if np.ndim(primal(y)) != 0:
        raise ValueError("reverse_gradient needs a scalar output")
    if not isinstance(y, Var):
        return float(y), np.zeros_like(x)
    grads = tape.gradient(y, args)
    return float(y.value), np.array([float(g) for g in grads])


def jacobian(fn, x, mode: str = "reverse"):
    """Dense Jacobian of a vector program; columns (forward) or rows (reverse)."""
    x = np.asarray(x, dtype=float)
    if mode == "forward":
        cols = [forward_directional(fn, x, e)[1] for e in np.eye(len(x))]
        return np.column_stack(cols)
    if mode == "reverse":
        m = len(_as_outputs(fn(*x)))
        rows = [reverse_gradient(lambda *a, i=i: _as_outputs(fn(*a))[i], x)[1] for i in range(m)]
        return np.vstack(rows)
    raise ValueError(f"unknown mode {mode!r}")
