"""Complex tensors on a define-by-run reverse-mode tape.

A :class:`ComplexTensor` is a pair of real numpy planes (``re``, ``im``); a
:class:`RealTensor` wraps a single plane.  Operations record themselves on the
active :class:`Tape` (if any) together with a backward rule.  Gradients are
always taken with respect to the real and imaginary planes independently, so a
complex parameter behaves like two real parameters.

Usage::

    with Tape() as tape:
        loss = (magnitude(cmul(a, b)) ** 2).sum()
    grads = tape.backward(loss)
    g_re, g_im = grads[a]
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

EPS_MAG = 1e-12


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by operation '{op}'")
        self.op = op


_local = threading.local()
_default_dtype = np.float32


def default_dtype():
    return getattr(_local, "dtype", _default_dtype)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new parameters and constants."""
    prev = default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    prev = getattr(_local, "check_finite", False)
    _local.check_finite = enabled
    try:
        yield
    finally:
        _local.check_finite = prev


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording (e.g. for evaluation inside a training loop)."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


class Node:
    __slots__ = ("requires_grad", "name", "__weakref__")

    is_complex = False

    @property
    def planes(self) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    @property
    def shape(self) -> tuple[int, ...]:
        return self.planes[0].shape

    @property
    def ndim(self) -> int:
        return self.planes[0].ndim

    @property
    def dtype(self):
        return self.planes[0].dtype

    @property
    def size(self) -> int:
        return self.planes[0].size


class RealTensor(Node):
    __slots__ = ("data",)

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(default_dtype())
        self.requires_grad = requires_grad
        self.name = name

    @property
    def planes(self):
        return (self.data,)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"RealTensor(shape={self.shape}, dtype={self.dtype})"

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

    def __truediv__(self, other):
        if isinstance(other, Node):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None):
        return rsum(self, axis)

    def mean(self, axis=None):
        return rmean(self, axis)


class ComplexTensor(Node):
    """Complex array stored as independent real and imaginary planes."""

    __slots__ = ("re", "im")
    is_complex = True

    def __init__(self, re, im=None, requires_grad: bool = False, name: str | None = None):
        re = np.asarray(re)
        if np.iscomplexobj(re):
            if im is not None:
                raise ContractError("pass either a complex array or two real planes")
            re, im = re.real.copy(), re.imag.copy()
        if re.dtype.kind != "f":
            re = re.astype(default_dtype())
        im = np.zeros_like(re) if im is None else np.asarray(im, dtype=re.dtype)
        if re.shape != im.shape:
            raise DimensionError(f"re shape {re.shape} != im shape {im.shape}")
        self.re = re
        self.im = im
        self.requires_grad = requires_grad
        self.name = name

    @property
    def planes(self):
        return (self.re, self.im)

    def numpy(self) -> np.ndarray:
        return self.re + 1j * self.im

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"

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

    def __truediv__(self, other):
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return cmatmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        return permute(self, axes)


def zeros_complex(shape, dtype=None) -> ComplexTensor:
    dtype = dtype or default_dtype()
    return ComplexTensor(np.zeros(shape, dtype), np.zeros(shape, dtype))


def constant(x) -> Node:
    """Wrap a python scalar or array as an untracked tensor."""
    if isinstance(x, Node):
        return x
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        return ComplexTensor(arr.astype(np.complex128).real.astype(default_dtype()),
                             arr.imag.astype(default_dtype()))
    return RealTensor(arr.astype(default_dtype()) if arr.dtype.kind != "f" else arr)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class _Record:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Gradients:
    """Map from leaf tensors to their gradient planes.

    Tensors that never influenced the loss map to zeros.
    """

    def __init__(self, grads: dict[int, list[np.ndarray]], nodes: dict[int, Node]):
        self._grads = grads
        self._nodes = nodes

    def planes(self, node: Node) -> list[np.ndarray]:
        g = self._grads.get(id(node))
        if g is None or self._nodes.get(id(node)) is not node:
            return [np.zeros_like(p) for p in node.planes]
        return g

    def __getitem__(self, node: Node):
        g = self.planes(node)
        return tuple(g) if node.is_complex else g[0]

    def __contains__(self, node: Node) -> bool:
        return self._nodes.get(id(node)) is node


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: RealTensor) -> Gradients:
        if not isinstance(loss, RealTensor) or loss.size != 1:
            raise ContractError("backward() needs a real scalar loss")
        grads: dict[int, list[np.ndarray]] = {id(loss): [np.ones_like(loss.data)]}
        nodes: dict[int, Node] = {id(loss): loss}
        produced = set()
        for rec in reversed(self.records):
            produced.add(id(rec.out))
            g_out = grads.pop(id(rec.out), None)
            if g_out is None:
                continue
            in_grads = rec.backward(g_out)
            for x, gx in zip(rec.inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                acc = grads.get(key)
                if acc is None:
                    grads[key] = list(gx)
                    nodes[key] = x
                else:
                    grads[key] = [a + b for a, b in zip(acc, gx)]
        self.records = []
        leaves = {k: v for k, v in grads.items() if k not in produced}
        return Gradients(leaves, {k: nodes[k] for k in leaves})


def track(op: str, out: Node, inputs: Sequence[Node], backward: Callable) -> Node:
    """Register ``out`` as produced by ``inputs`` on the active tape.

    ``backward`` maps the list of output gradient planes to one entry per
    input: a list of gradient planes shaped like that input, or ``None``.
    """
    if getattr(_local, "check_finite", False):
        for p in out.planes:
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(op)
    tape = active_tape()
    if tape is None or not any(x.requires_grad for x in inputs):
        out.requires_grad = False
        return out
    out.requires_grad = True
    tape.records.append(_Record(op, out, list(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bshape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as e:
        raise DimensionError(f"shapes {shapes} are not broadcastable") from e


def _as_node(x, like: Node | None = None) -> Node:
    if isinstance(x, Node):
        return x
    if np.iscomplexobj(x):
        return constant(x)
    dtype = like.dtype if like is not None else default_dtype()
    return RealTensor(np.asarray(x, dtype=dtype))


def _to_complex(x: Node) -> ComplexTensor:
    if x.is_complex:
        return x
    return make_complex(x, None)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _as_node(a, b if isinstance(b, Node) else None), _as_node(b, a if isinstance(a, Node) else None)
    if a.is_complex or b.is_complex:
        a, b = _to_complex(a), _to_complex(b)
        _bshape(a.shape, b.shape)
        out = ComplexTensor(a.re + b.re, a.im + b.im)

        def backward(g):
            return [[_unbroadcast(p, a.shape) for p in g], [_unbroadcast(p, b.shape) for p in g]]

        return track("add", out, [a, b], backward)
    _bshape(a.shape, b.shape)
    out = RealTensor(a.data + b.data)
    return track("add", out, [a, b],
                 lambda g: [[_unbroadcast(g[0], a.shape)], [_unbroadcast(g[0], b.shape)]])


def sub(a, b) -> Node:
    return add(a, mul(_as_node(b, a if isinstance(a, Node) else None), -1.0))


def mul(a, b) -> Node:
    """Elementwise product; dispatches on real/complex operands."""
    if not isinstance(b, Node) and np.isscalar(b) and not np.iscomplexobj(b):
        return _scale(a, float(b))
    if not isinstance(a, Node) and np.isscalar(a) and not np.iscomplexobj(a):
        return _scale(b, float(a))
    a, b = _as_node(a), _as_node(b)
    if a.is_complex and b.is_complex:
        return cmul_elementwise(a, b)
    if a.is_complex:
        return _real_times_complex(b, a)
    if b.is_complex:
        return _real_times_complex(a, b)
    _bshape(a.shape, b.shape)
    out = RealTensor(a.data * b.data)
    return track("mul", out, [a, b], lambda g: [[_unbroadcast(g[0] * b.data, a.shape)],
                                                [_unbroadcast(g[0] * a.data, b.shape)]])


def _scale(x: Node, k: float) -> Node:
    if x.is_complex:
        out = ComplexTensor(x.re * k, x.im * k)
    else:
        out = RealTensor(x.data * k)
    return track("scale", out, [x], lambda g: [[p * k for p in g]])


def _real_times_complex(r: RealTensor, z: ComplexTensor) -> ComplexTensor:
    _bshape(r.shape, z.shape)
    out = ComplexTensor(r.data * z.re, r.data * z.im)

    def backward(g):
        gr = _unbroadcast(g[0] * z.re + g[1] * z.im, r.shape)
        return [[gr], [_unbroadcast(g[0] * r.data, z.shape), _unbroadcast(g[1] * r.data, z.shape)]]

    return track("real_mul", out, [r, z], backward)


def cmul_elementwise(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """(a.re*b.re - a.im*b.im) + j(a.re*b.im + a.im*b.re), with broadcasting."""
    a, b = _to_complex(_as_node(a)), _to_complex(_as_node(b))
    _bshape(a.shape, b.shape)
    out = ComplexTensor(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)

    def backward(g):
        gr, gi = g
        # d/da = g * conj(b), d/db = g * conj(a) in packed (re, im) form
        ga = [gr * b.re + gi * b.im, gi * b.re - gr * b.im]
        gb = [gr * a.re + gi * a.im, gi * a.re - gr * a.im]
        return [[_unbroadcast(p, a.shape) for p in ga], [_unbroadcast(p, b.shape) for p in gb]]

    return track("cmul", out, [a, b], backward)


def div(a: RealTensor, b: RealTensor) -> RealTensor:
    _bshape(a.shape, b.shape)
    out = RealTensor(a.data / b.data)

    def backward(g):
        return [[_unbroadcast(g[0] / b.data, a.shape)],
                [_unbroadcast(-g[0] * a.data / (b.data * b.data), b.shape)]]

    return track("div", out, [a, b], backward)


def conj(z: ComplexTensor) -> ComplexTensor:
    out = ComplexTensor(z.re, -z.im)
    return track("conj", out, [z], lambda g: [[g[0], -g[1]]])


def make_complex(re: RealTensor, im: RealTensor | None) -> ComplexTensor:
    """Assemble a complex tensor from two real tensors (``im=None`` means zero)."""
    if im is None:
        out = ComplexTensor(re.data, np.zeros_like(re.data))
        return track("make_complex", out, [re], lambda g: [[g[0]]])
    if re.shape != im.shape:
        raise DimensionError(f"re shape {re.shape} != im shape {im.shape}")
    out = ComplexTensor(re.data, im.data)
    return track("make_complex", out, [re, im], lambda g: [[g[0]], [g[1]]])


def real_part(z: ComplexTensor) -> RealTensor:
    out = RealTensor(z.re)
    return track("real_part", out, [z], lambda g: [[g[0], np.zeros_like(g[0])]])


def imag_part(z: ComplexTensor) -> RealTensor:
    out = RealTensor(z.im)
    return track("imag_part", out, [z], lambda g: [[np.zeros_like(g[0]), g[0]]])


def magnitude(z: ComplexTensor, eps: float = EPS_MAG) -> RealTensor:
    """sqrt(re^2 + im^2 + eps); differentiable at the origin."""
    m = np.sqrt(z.re * z.re + z.im * z.im + eps)
    out = RealTensor(m)

    def backward(g):
        k = g[0] / m
        return [[k * z.re, k * z.im]]

    return track("magnitude", out, [z], backward)


def power(x: RealTensor, p: float) -> RealTensor:
    d = x.data
    out = RealTensor(d ** p)
    return track("power", out, [x], lambda g: [[g[0] * p * d ** (p - 1)]])


def rabs(x: RealTensor) -> RealTensor:
    out = RealTensor(np.abs(x.data))
    return track("abs", out, [x], lambda g: [[g[0] * np.sign(x.data)]])


def exp(x: RealTensor) -> RealTensor:
    e = np.exp(x.data)
    return track("exp", RealTensor(e), [x], lambda g: [[g[0] * e]])


def sigmoid(x: RealTensor) -> RealTensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return track("sigmoid", RealTensor(s), [x], lambda g: [[g[0] * s * (1.0 - s)]])


def rsum(x: Node, axis=None, keepdims: bool = False) -> Node:
    shape = x.shape

    def expand(p):
        if axis is not None and not keepdims:
            p = np.expand_dims(p, axis)
        return np.broadcast_to(p, shape)

    if x.is_complex:
        out = ComplexTensor(x.re.sum(axis=axis, keepdims=keepdims), x.im.sum(axis=axis, keepdims=keepdims))
    else:
        out = RealTensor(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)))
    return track("sum", out, [x], lambda g: [[expand(p) for p in g]])


def rmean(x: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return _scale(rsum(x, axis, keepdims), 1.0 / n)


def softmax_lastdim(x: RealTensor) -> RealTensor:
    """Row softmax over the last axis with max-subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    s = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)

    def backward(g):
        gs = g[0] * s
        return [[gs - s * gs.sum(axis=-1, keepdims=True)]]

    return track("softmax", RealTensor(s), [x], backward)


def planewise(z: Node, fn: Callable, dfn: Callable, op: str) -> Node:
    """Apply a real activation to each plane separately.

    ``dfn(x, y)`` returns dy/dx given the input plane and the output plane.
    """
    ins = z.planes
    outs = [fn(p) for p in ins]
    out = ComplexTensor(*outs) if z.is_complex else RealTensor(outs[0])
    return track(op, out, [z], lambda g: [[gp * dfn(x, y) for gp, x, y in zip(g, ins, outs)]])


def _open_tanh(x: np.ndarray) -> np.ndarray:
    # tanh rounds to exactly +-1 for |x| beyond ~9 (float32) or ~19 (float64); keep the range open
    edge = np.nextafter(np.array(1.0, x.dtype), np.array(0.0, x.dtype))
    return np.clip(np.tanh(x), -edge, edge)


def tanh(z: Node) -> Node:
    """Per-plane tanh whose outputs lie strictly inside (-1, 1)."""
    return planewise(z, _open_tanh, lambda x, y: 1.0 - y * y, "tanh")


def leaky_relu(z: Node, slope: float = 0.01) -> Node:
    return planewise(z, lambda x: np.where(x > 0, x, slope * x),
                     lambda x, y: np.where(x > 0, 1.0, slope).astype(x.dtype), "leaky_relu")


def swish(z: Node) -> Node:
    def fn(x):
        return x / (1.0 + np.exp(-x))

    def dfn(x, y):
        s = 1.0 / (1.0 + np.exp(-x))
        return s + y * (1.0 - s)

    return planewise(z, fn, dfn, "swish")


# ---------------------------------------------------------------------------
# matrix products
# ---------------------------------------------------------------------------


def cmatmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Batched complex matrix product from four real products.

    out = (A_R B_R - A_I B_I) + j(A_R B_I + A_I B_R)
    """
    a, b = _to_complex(a), _to_complex(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    _bshape(a.shape[:-2], b.shape[:-2])
    rr, ii = a.re @ b.re, a.im @ b.im
    ri, ir = a.re @ b.im, a.im @ b.re
    out = ComplexTensor(rr - ii, ri + ir)

    def backward(g):
        gr, gi = g
        bT_re, bT_im = np.swapaxes(b.re, -1, -2), np.swapaxes(b.im, -1, -2)
        aT_re, aT_im = np.swapaxes(a.re, -1, -2), np.swapaxes(a.im, -1, -2)
        # G @ B^H and A^H @ G
        ga = [gr @ bT_re + gi @ bT_im, gi @ bT_re - gr @ bT_im]
        gb = [aT_re @ gr + aT_im @ gi, aT_re @ gi - aT_im @ gr]
        return [[_unbroadcast(p, a.shape) for p in ga], [_unbroadcast(p, b.shape) for p in gb]]

    return track("cmatmul", out, [a, b], backward)


def matmul(a: RealTensor, b: RealTensor) -> RealTensor:
    out = RealTensor(a.data @ b.data)

    def backward(g):
        return [[_unbroadcast(g[0] @ np.swapaxes(b.data, -1, -2), a.shape)],
                [_unbroadcast(np.swapaxes(a.data, -1, -2) @ g[0], b.shape)]]

    return track("matmul", out, [a, b], backward)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def _rebuild(x: Node, planes) -> Node:
    return ComplexTensor(*planes) if x.is_complex else RealTensor(planes[0])


def reshape(x: Node, shape) -> Node:
    shape = tuple(int(s) for s in shape)
    try:
        planes = [p.reshape(shape) for p in x.planes]
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}") from e
    old = x.shape
    return track("reshape", _rebuild(x, planes), [x], lambda g: [[p.reshape(old) for p in g]])


def permute(x: Node, axes) -> Node:
    axes = tuple(int(a) for a in axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise DimensionError(f"invalid permutation {axes} for {x.ndim} axes")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    planes = [np.transpose(p, axes) for p in x.planes]
    return track("permute", _rebuild(x, planes), [x], lambda g: [[np.transpose(p, inv) for p in g]])


def concat(xs: Sequence[Node], axis: int) -> Node:
    xs = list(xs)
    if any(x.is_complex for x in xs):
        xs = [_to_complex(x) for x in xs]
    ndim = xs[0].ndim
    ax = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"cannot concatenate {[t.shape for t in xs]} on axis {axis}")
    nplanes = len(xs[0].planes)
    planes = [np.concatenate([x.planes[k] for x in xs], axis=ax) for k in range(nplanes)]
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def backward(g):
        res = []
        for i in range(len(xs)):
            sl = [slice(None)] * ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            res.append([p[tuple(sl)] for p in g])
        return res

    return track("concat", _rebuild(xs[0], planes), xs, backward)


def slice_axis(x: Node, axis: int, start: int, stop: int) -> Node:
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis of size {n}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    planes = [p[sl] for p in x.planes]
    shape = x.shape

    def backward(g):
        res = []
        for p in g:
            full = np.zeros(shape, dtype=p.dtype)
            full[sl] = p
            res.append(full)
        return [res]

    return track("slice", _rebuild(x, planes), [x], backward)


def split(x: Node, sizes: Sequence[int] | int, axis: int) -> list[Node]:
    n = x.shape[axis % x.ndim]
    if isinstance(sizes, int):
        if n % sizes:
            raise DimensionError(f"axis of size {n} does not split into {sizes} parts")
        sizes = [n // sizes] * sizes
    if sum(sizes) != n:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to {n}")
    bounds = np.cumsum([0] + list(sizes))
    return [slice_axis(x, axis, int(bounds[i]), int(bounds[i + 1])) for i in range(len(sizes))]


def pad(x: Node, widths: Sequence[tuple[int, int]], value: float = 0.0) -> Node:
    """Constant padding; ``widths`` has one (before, after) pair per axis."""
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != x.ndim:
        raise DimensionError(f"need {x.ndim} pad widths, got {len(widths)}")
    planes = [np.pad(p, widths, constant_values=value) for p in x.planes]
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
    return track("pad", _rebuild(x, planes), [x], lambda g: [[p[sl] for p in g]])


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(f: Callable[[], RealTensor], params: Sequence[Node], step: float = 1e-4,
                      max_elements: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current values of ``params``; it
    is evaluated once on a tape and twice per perturbed element without one.
    ``max_elements`` samples that many elements per plane instead of all.
    The denominator is floored at ``max(1e-6 * max(1, |loss|), 1e-4 * g_max)``,
    with ``g_max`` the largest analytic gradient element, so gradients that are
    exactly zero (a bias feeding a normalization, say) are not judged against
    round-off in the differences.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    with check_finite(), Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    g_max = max((float(np.abs(g).max(initial=0.0)) for p in params for g in grads.planes(p)), default=0.0)
    floor = max(1e-6 * max(1.0, abs(loss.item())), 1e-4 * g_max)
    worst = 0.0
    with check_finite(), no_grad():
        for p in params:
            for plane, g in zip(p.planes, grads.planes(p)):
                flat = plane.reshape(-1)
                if not np.shares_memory(flat, plane):
                    raise ContractError("parameter planes must be contiguous")
                idx = np.arange(flat.size)
                if max_elements is not None and flat.size > max_elements:
                    idx = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
                gflat = np.asarray(g).reshape(-1)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + step
                    fp = f().item()
                    flat[i] = orig - step
                    fm = f().item()
                    flat[i] = orig
                    cd = (fp - fm) / (2 * step)
                    an = float(gflat[i])
                    err = abs(an - cd) / max(abs(an), abs(cd), floor)
                    worst = max(worst, err)
    return worst
