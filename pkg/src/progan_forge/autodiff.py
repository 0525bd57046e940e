"""Reverse-mode automatic differentiation on dense numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced.
Backward rules are written in terms of the public ops themselves, so a
gradient produced with ``create_graph=True`` is again a differentiable
node and can be differentiated a second time (the WGAN-GP penalty needs
exactly that).

Graphs are confined to a single thread; tensors are treated as immutable
once created and are safe to share read-only between threads.
"""

from __future__ import annotations

import contextlib
import threading
import warnings

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


class GraphError(RuntimeError):
    """Raised on invalid differentiation requests (non-scalar loss, ...)."""


class NumericError(FloatingPointError):
    """Raised by explicit finiteness checks (NaN/Inf are never silent)."""


class UnreachableParameterWarning(UserWarning):
    """A requested parameter is not reachable from the loss."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_on", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph building; ops executed inside return constant tensors."""
    prev = grad_enabled()
    _state.grad_on = False
    try:
        yield
    finally:
        _state.grad_on = prev


class Tensor:
    """N-d float array node in a differentiable computation graph.

    ``parents`` and ``op`` describe provenance; leaves have neither.
    ``data`` is float32 or float64; float32 is the training storage
    format, float64 the gradient-check format.
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "_vjps", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents = ()
        self._vjps = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # arithmetic sugar; all graph building goes through the module ops
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other, self))

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return pow_const(self, float(p))


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _node(data: np.ndarray, op: str, parents, vjps) -> Tensor:
    """Create a graph node; drops provenance when grads are off."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._vjps = tuple(vjps)
    else:
        out.requires_grad = False
        out.parents = ()
        out._vjps = ()
    return out


def check_finite(t: Tensor, name: str = "tensor") -> Tensor:
    """Explicit NaN/Inf check; the engine itself never checks silently."""
    if not np.all(np.isfinite(t.data)):
        bad = int(np.size(t.data) - np.count_nonzero(np.isfinite(t.data)))
        raise NumericError(f"{name} contains {bad} non-finite element(s)")
    return t


# ---------------------------------------------------------------------------
# elementwise ops (broadcasting allowed; vjps reduce with sum_to)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data + b.data,
        "add",
        (a, b),
        (lambda g: sum_to(g, a.shape), lambda g: sum_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data - b.data,
        "sub",
        (a, b),
        (lambda g: sum_to(g, a.shape), lambda g: sum_to(neg(g), b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data * b.data,
        "mul",
        (a, b),
        (lambda g: sum_to(mul(g, b), a.shape), lambda g: sum_to(mul(g, a), b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data / b.data,
        "div",
        (a, b),
        (
            lambda g: sum_to(div(g, b), a.shape),
            lambda g: sum_to(neg(div(mul(g, a), mul(b, b))), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, "neg", (a,), (lambda g: neg(g),))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, "square", (a,), (lambda g: mul(g, mul_const(a, 2.0)),))


def mul_const(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _node(a.data * c, "mul_const", (a,), (lambda g: mul_const(g, c),))


def add_const(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _node(a.data + c, "add_const", (a,), (lambda g: g,))


def pow_const(a: Tensor, p: float) -> Tensor:
    return _node(
        a.data**p,
        "pow_const",
        (a,),
        (lambda g: mul(g, mul_const(pow_const(a, p - 1.0), p)),),
    )


def sqrt(a: Tensor) -> Tensor:
    return _node(
        np.sqrt(a.data), "sqrt", (a,), (lambda g: div(mul_const(g, 0.5), sqrt(a)),)
    )


def exp(a: Tensor) -> Tensor:
    return _node(np.exp(a.data), "exp", (a,), (lambda g: mul(g, exp(a)),))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), "log", (a,), (lambda g: div(g, a),))


def sigmoid(a: Tensor) -> Tensor:
    d = a.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype, copy=False)

    def vjp(g):
        sig = sigmoid(a)
        return mul(g, mul(sig, add_const(neg(sig), 1.0)))

    return _node(s, "sigmoid", (a,), (vjp,))


def tanh(a: Tensor) -> Tensor:
    def vjp(g):
        t = tanh(a)
        return mul(g, add_const(neg(mul(t, t)), 1.0))

    return _node(np.tanh(a.data), "tanh", (a,), (vjp,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    d = a.data
    s = d.dtype.type(slope)

    def vjp(g):
        # the mask is constant given a; recomputing here keeps no-grad
        # forwards single-pass
        return mul(g, Tensor(np.where(d > 0, d.dtype.type(1), s)))

    return _node(np.where(d > 0, d, d * s), "leaky_relu", (a,), (vjp,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    d = a.data
    mask = ((d >= lo) & (d <= hi)).astype(d.dtype)
    return _node(np.clip(d, lo, hi), "clip", (a,), (lambda g: mul(g, Tensor(mask)),))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,), (lambda g: reshape(g, old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _node(
        a.data.transpose(axes), "transpose", (a,), (lambda g: transpose(g, inverse),)
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _node(
        np.broadcast_to(a.data, shape).copy(),
        "broadcast_to",
        (a,),
        (lambda g: sum_to(g, old),),
    )


def _reduce_to(data: np.ndarray, shape) -> np.ndarray:
    if data.shape == tuple(shape):
        return data
    lead = data.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"cannot reduce shape {data.shape} to {tuple(shape)}")
    if lead:
        data = data.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and data.shape[i] != 1)
    if axes:
        data = data.sum(axis=axes, keepdims=True)
    if data.shape != tuple(shape):
        raise ShapeError(f"cannot reduce shape to {tuple(shape)}")
    return data


def sum_to(a: Tensor, shape) -> Tensor:
    """Inverse of broadcasting: sum ``a`` down to ``shape``."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    old = a.shape
    return _node(
        _reduce_to(a.data, shape),
        "sum_to",
        (a,),
        (lambda g: broadcast_to(g, old),),
    )


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    old = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(old))

    def vjp(g):
        return broadcast_to(reshape(g, kept), old)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), "sum", (a,), (vjp,))


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul_const(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics for 2-D operands and batched 3-D/2-D mixes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def _swap_last(t: Tensor) -> Tensor:
        axes = list(range(t.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(t, axes)

    def vjp_a(g):
        return sum_to(matmul(g, _swap_last(b)), a.shape)

    def vjp_b(g):
        return sum_to(matmul(_swap_last(a), g), b.shape)

    return _node(np.matmul(a.data, b.data), "matmul", (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------------------
# slicing / concatenation (dual linear pair)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].ndim
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])
    vjps = tuple(
        (lambda s, l: (lambda g: narrow(g, axis, s, l)))(int(offsets[i]), t.shape[axis])
        for i, t in enumerate(tensors)
    )
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, vjps
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = axis % a.ndim
    index = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(a.ndim)
    )
    before, after = start, a.shape[axis] - start - length

    def vjp(g):
        pieces = []
        if before:
            shp = list(a.shape)
            shp[axis] = before
            pieces.append(Tensor(np.zeros(shp, dtype=g.data.dtype)))
        pieces.append(g)
        if after:
            shp = list(a.shape)
            shp[axis] = after
            pieces.append(Tensor(np.zeros(shp, dtype=g.data.dtype)))
        return concat(pieces, axis) if len(pieces) > 1 else g

    return _node(a.data[index], "narrow", (a,), (vjp,))


# ---------------------------------------------------------------------------
# backward


def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt, create_graph: bool = False):
    """Gradients of a scalar ``loss`` w.r.t. each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are graph nodes and
    can be differentiated again. Parameters unreachable from the loss get
    a zero gradient plus an :class:`UnreachableParameterWarning`.
    """
    wrt = list(wrt)
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")

    wrt_ids = {id(t) for t in wrt}
    # only propagate through nodes from which a requested tensor is reachable
    order = _topo_order(loss)
    needed: set[int] = set()
    for node in order:  # children come after parents in `order`
        if id(node) in wrt_ids or any(id(p) in needed for p in node.parents):
            needed.add(id(node))

    grads: dict[int, Tensor] = {}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        seed = Tensor(np.ones_like(loss.data))
        grads[id(loss)] = seed
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None:
                continue
            if id(node) not in wrt_ids:
                del grads[id(node)]  # free accumulators no longer needed
            for parent, vjp in zip(node.parents, node._vjps):
                if not parent.requires_grad or id(parent) not in needed:
                    continue
                pg = vjp(g)
                if pg.shape != parent.shape:
                    raise GraphError(
                        f"vjp of {node.op} produced shape {pg.shape}, "
                        f"parent has {parent.shape}"
                    )
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)

        out = []
        for t in wrt:
            g = grads.get(id(t))
            if g is None:
                warnings.warn(
                    f"parameter {t.name or t!r} is unreachable from the loss; "
                    "returning a zero gradient",
                    UnreachableParameterWarning,
                    stacklevel=2,
                )
                g = Tensor(np.zeros_like(t.data))
            out.append(g)
    return out
