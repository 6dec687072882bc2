"""Reverse-mode differentiation over dense real and complex numpy arrays.

Every value is a :class:`Tensor` wrapping a float64 or complex128 array.
Operations on tensors that require gradients record their inputs and a
backward closure; :func:`backward` walks the recorded graph once in reverse
topological order.

Complex gradients follow the convention ``grad = dL/dRe(z) + 1j * dL/dIm(z)``
for a real scalar loss ``L``.  With that convention the gradient of a
product ``z = a * b`` with respect to ``a`` is ``grad_z * conj(b)``, for real
and complex ``a`` alike (real parents keep only the real part).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor", "Tape", "tensor", "as_tensor", "no_grad", "is_grad_enabled",
    "backward", "gradients", "check_gradients", "GradientReport",
    "add", "sub", "mul", "div", "neg", "power", "matmul", "einsum",
    "sum", "mean", "exp", "log", "log2", "sqrt", "reciprocal", "sigmoid", "gelu",
    "tanh", "sin", "cos", "real", "imag", "conj", "to_complex",
    "reshape", "transpose", "getitem", "pad", "concatenate", "stack",
    "where", "clip_max_st", "logsumexp", "rfft", "irfft", "fft", "ifft",
    "detach",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind == "c":
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    """An immutable array node in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x) -> Tensor:
    return Tensor(as_tensor(x).data)


def _node(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _fit(g: np.ndarray, p: Tensor) -> np.ndarray:
    g = _unbroadcast(g, p.shape)
    if not p.is_complex and g.dtype.kind == "c":
        g = g.real
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _fit(g, a), _fit(g, b)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _fit(g, a), _fit(-g, b)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        ga = _fit(g * np.conj(b.data), a) if a.requires_grad else None
        gb = _fit(g * np.conj(a.data), b) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _fit(g / np.conj(b.data), a) if a.requires_grad else None
        gb = _fit(-g * np.conj(out / b.data), b) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power: exponent must be a constant")
    p = float(exponent)

    def bw(g):
        return (_fit(g * np.conj(p * a.data ** (p - 1.0)), a),)

    return _node(a.data ** p, (a,), bw, "pow")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands need ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def bw(g):
        ga = _fit(g @ np.conj(np.swapaxes(b.data, -1, -2)), a) if a.requires_grad else None
        gb = _fit(np.conj(np.swapaxes(a.data, -1, -2)) @ g, b) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``"ij,jk->ik"``); no ellipsis, no repeated indices."""
    ops = [as_tensor(o) for o in operands]
    if "->" not in subscripts or "." in subscripts:
        raise ValueError("einsum: explicit '->' output without ellipsis is required")
    lhs, out_subs = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ValueError("einsum: operand count does not match subscripts")
    sizes = {}
    for s, o in zip(in_subs, ops):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise ValueError(f"einsum: subscripts '{s}' do not fit shape {o.shape}")
        for c, n in zip(s, o.shape):
            if sizes.setdefault(c, n) != n:
                raise ValueError(f"einsum: index '{c}' has sizes {sizes[c]} and {n}")
    data = np.einsum(subscripts, *[o.data for o in ops], optimize=True)

    def bw(g):
        grads = []
        for i, (s, o) in enumerate(zip(in_subs, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [j for j in range(len(ops)) if j != i]
            avail = set(out_subs).union(*[set(in_subs[j]) for j in others])
            target = "".join(c for c in s if c in avail)
            expr = ",".join([out_subs] + [in_subs[j] for j in others]) + "->" + target
            r = np.einsum(expr, g, *[np.conj(ops[j].data) for j in others], optimize=True)
            if target != s:
                r = r.reshape([sizes[c] if c in target else 1 for c in s])
                r = np.broadcast_to(r, o.shape)
            grads.append(_fit(r, o))
        return tuple(grads)

    return _node(data, ops, bw, "einsum")


# -- reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), bw, "logsumexp")


# -- elementwise unary ---------------------------------------------------------

def _unary(a, value, deriv, op):
    a = as_tensor(a)
    out = value(a.data)

    def bw(g):
        return (_fit(g * np.conj(deriv(a.data, out)), a),)

    return _node(out, (a,), bw, op)


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y, "exp")


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x, "log")


def log2(a) -> Tensor:
    return _unary(a, np.log2, lambda x, y: 1.0 / (x * np.log(2.0)), "log2")


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y, "sqrt")


def reciprocal(a) -> Tensor:
    return _unary(a, lambda x: 1.0 / x, lambda x, y: -y * y, "reciprocal")


def sigmoid(a) -> Tensor:
    return _unary(a, special.expit, lambda x, y: y * (1.0 - y), "sigmoid")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y, "tanh")


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, y: np.cos(x), "sin")


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, y: -np.sin(x), "cos")


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    def value(x):
        return 0.5 * x * (1.0 + special.erf(x * _SQRT1_2))

    def deriv(x, y):
        return 0.5 * (1.0 + special.erf(x * _SQRT1_2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)

    return _unary(a, value, deriv, "gelu")


def real(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.real(a.data).copy(), (a,), lambda g: (g.astype(a.data.dtype),), "real")


def imag(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.imag(a.data).copy(), (a,), lambda g: (_fit(1j * g, a),), "imag")


def conj(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.conj(a.data), (a,), lambda g: (_fit(np.conj(g), a),), "conj")


def to_complex(re, im=None) -> Tensor:
    re = as_tensor(re)
    if im is None:
        return _node(re.data.astype(np.complex128), (re,), lambda g: (_fit(g, re),), "complex")
    im = as_tensor(im)
    return add(re, mul(im, 1j))


# -- shape manipulation --------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    """Indexing, slicing and gather; backward scatters with accumulation."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise TypeError("getitem: index must be a constant")
    out = a.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        z = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            z[index] += g
        else:
            np.add.at(z, index, g)
        return (_fit(z, a),)

    return _node(np.array(out, copy=True) if basic else out, (a,), bw, "getitem")


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` as in :func:`numpy.pad`."""
    a = as_tensor(a)
    pw = [tuple(p) for p in np.broadcast_to(np.asarray(pad_width, dtype=int), (a.ndim, 2))]
    if any(p < 0 for pair in pw for p in pair):
        raise ValueError("pad: negative widths are not supported")
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, a.shape))
    return _node(np.pad(a.data, pw), (a,), lambda g: (g[slices],), "pad")


def concatenate(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append(_fit(g[tuple(idx)], t))
        return tuple(out)

    return _node(data, ts, bw, "concat")


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(_fit(np.take(g, i, axis=axis), t) for i, t in enumerate(ts))

    return _node(data, ts, bw, "stack")


def where(condition, a, b) -> Tensor:
    """Comparison-gated select; the gate is treated as a constant."""
    cond = np.asarray(condition.data if isinstance(condition, Tensor) else condition, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    data = np.where(cond, a.data, b.data)

    def bw(g):
        zero = np.zeros((), dtype=g.dtype)
        return _fit(np.where(cond, g, zero), a), _fit(np.where(cond, zero, g), b)

    return _node(data, (a, b), bw, "where")


def clip_max_st(a, upper: float) -> Tensor:
    """``min(a, upper)`` forward, identity gradient (straight-through)."""
    a = as_tensor(a)
    return _node(np.minimum(a.data, upper), (a,), lambda g: (g,), "clip_st")


# -- Fourier transforms -------------------------------------------------------

def rfft(a, axis: int = -1) -> Tensor:
    """Real-input DFT along ``axis`` (unnormalised forward)."""
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("rfft: input must be real")
    n = a.shape[axis]

    def bw(g):
        widths = [(0, 0)] * g.ndim
        widths[axis] = (0, n - g.shape[axis])
        full = np.pad(g, widths)
        return (np.real(np.fft.ifft(full, axis=axis)) * n,)

    return _node(np.fft.rfft(a.data, axis=axis), (a,), bw, "rfft")


def irfft(a, n: int, axis: int = -1) -> Tensor:
    """Inverse of :func:`rfft` with ``1/n`` normalisation; ``a`` holds ``n//2+1`` bins."""
    a = as_tensor(a)
    bins = n // 2 + 1
    if a.shape[axis] != bins:
        raise ValueError(f"irfft: length {n} needs {bins} bins along axis {axis}, got {a.shape[axis]}")
    weight = np.full(bins, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    shape = [1] * a.ndim
    shape[axis] = bins
    weight = weight.reshape(shape)
    edge = np.zeros(bins, dtype=bool)
    edge[0] = True
    if n % 2 == 0:
        edge[-1] = True
    edge = edge.reshape(shape)

    def bw(g):
        G = np.fft.rfft(g, axis=axis) * (weight / n)
        G = np.where(edge, G.real, G)
        return (_fit(G, a),)

    return _node(np.fft.irfft(a.data, n=n, axis=axis), (a,), bw, "irfft")


def fft(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    return _node(np.fft.fft(a.data, axis=axis), (a,),
                 lambda g: (_fit(np.fft.ifft(g, axis=axis) * n, a),), "fft")


def ifft(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    return _node(np.fft.ifft(a.data, axis=axis), (a,),
                 lambda g: (_fit(np.fft.fft(g, axis=axis) / n, a),), "ifft")


# -- backward pass ----------------------------------------------------------------

class Tape:
    """Topologically ordered record of the operations that produced ``output``.

    Every node appears after all of its inputs; :meth:`backward` visits the
    nodes exactly once, in reverse.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _toposort(output)

    def __len__(self):
        return len(self.nodes)

    def backward(self) -> dict:
        out = self.output
        if out.shape != ():
            raise ValueError(f"backward: output must be a scalar, got shape {out.shape}")
        grads = {id(out): np.ones((), dtype=out.data.dtype)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                leaves[id(node)] = (node, g)
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return leaves


def _toposort(out: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(out, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
    for node, g in Tape(output).backward().values():
        g = np.array(g, dtype=node.data.dtype if node.is_complex else np.float64)
        node.grad = g if node.grad is None else node.grad + g


def gradients(output: Tensor, leaves: Sequence[Tensor]) -> list:
    """Return d(output)/d(leaf) for each leaf without touching ``.grad``."""
    found = Tape(output).backward()
    result = []
    for leaf in leaves:
        entry = found.get(id(leaf))
        if entry is None:
            result.append(np.zeros_like(leaf.data))
        else:
            result.append(np.broadcast_to(entry[1], leaf.shape).astype(leaf.data.dtype))
    return result


# -- finite-difference checking ---------------------------------------------------

@dataclass
class GradientReport:
    analytic: list
    numeric: list
    max_rel_error: float
    tolerance: float
    nonfinite: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.nonfinite and self.max_rel_error < self.tolerance


def check_gradients(f: Callable, point, step: float = 1e-5, tolerance: float = 1e-4,
                    abs_floor: float = 1e-6) -> GradientReport:
    """Compare analytic gradients of scalar ``f`` with central differences.

    ``point`` is an array or a sequence of arrays, passed to ``f`` as tensors.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    Complex coordinates are perturbed along the real and imaginary axes.
    """
    if step <= 0:
        raise ValueError("check_gradients: step must be positive")
    single = isinstance(point, (np.ndarray, float, int, complex))
    arrays = [_as_array(point)] if single else [_as_array(p) for p in point]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*leaves)
    if out.shape != ():
        raise ValueError("check_gradients: f must return a scalar")
    analytic = gradients(out, leaves)

    def evaluate(vals):
        with no_grad():
            return float(np.real(f(*[Tensor(v) for v in vals]).data))

    numeric, nonfinite, worst = [], [], 0.0
    for k, base in enumerate(arrays):
        num = np.zeros_like(base)
        directions = (1.0, 1j) if base.dtype.kind == "c" else (1.0,)
        for idx in np.ndindex(base.shape):
            for d in directions:
                vals = [a.copy() for a in arrays]
                vals[k][idx] = base[idx] + step * d
                fp = evaluate(vals)
                vals[k][idx] = base[idx] - step * d
                fm = evaluate(vals)
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    nonfinite.append((k, idx))
                    continue
                est = (fp - fm) / (2.0 * step)
                num[idx] += est * d
                a = analytic[k][idx]
                a = a.real if d == 1.0 else a.imag
                err = abs(a - est) / max(abs(a), abs(est), abs_floor)
                worst = max(worst, err)
        numeric.append(num)
    return GradientReport(analytic, numeric, worst, tolerance, nonfinite)
