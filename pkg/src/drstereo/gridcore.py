"""Dense-grid numerics with a small reverse-mode differentiation engine.

Every learned quantity in the package is a :class:`Node`: a numpy array plus a
gradient buffer and a link to the primitive that produced it.  Grids carry up
to four axes, ordered (channel, disparity, height, width).  Storage defaults
to float32; reductions accumulate in float64.

Broadcasting is deliberately narrow: a primitive accepts either operands of
identical shape or a scalar (python number or single-element node) against a
grid.  Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float32
MAX_AXES = 4


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf where finite values are required."""


class Node:
    """A grid value in the computation graph.

    ``grad`` is allocated lazily and always has the shape and dtype of
    ``value``.  Leaves created by the user default to ``requires_grad=True``;
    constants wrapped implicitly by primitives do not require gradients.
    """

    __slots__ = ("value", "_grad", "parents", "op", "_backward", "requires_grad")

    def __init__(self, value, requires_grad: bool = True, dtype=None,
                 parents: tuple = (), op: str = "leaf", backward=None):
        arr = np.asarray(value, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > MAX_AXES:
            raise ShapeError(f"{op}: grids support at most {MAX_AXES} axes, got shape {arr.shape}")
        self.value = arr
        self._grad = None
        self.parents = parents
        self.op = op
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = np.asarray(g, dtype=self.value.dtype).reshape(self.value.shape)

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape}, dtype={self.dtype})"

    __array_priority__ = 1000

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
            raise TypeError("division is only defined by python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self):
        backward(self)


def as_node(x, like: Node | None = None) -> Node:
    """Wrap ``x`` as a constant node unless it already is one."""
    if isinstance(x, Node):
        return x
    dtype = like.dtype if like is not None else None
    return Node(np.asarray(x, dtype=dtype), requires_grad=False, op="const")


def constant(x, dtype=None) -> Node:
    return Node(np.asarray(x, dtype=dtype), requires_grad=False, op="const")


def detach(x: Node) -> Node:
    return Node(x.value, requires_grad=False, op="detach")


def _make(value, parents, op, backward) -> Node:
    req = any(p.requires_grad for p in parents)
    return Node(value, requires_grad=req, parents=tuple(parents), op=op,
                backward=backward if req else None)


def _is_scalar(x) -> bool:
    if isinstance(x, Node):
        return x.size == 1
    return np.ndim(x) == 0


def _reduce_to(g: np.ndarray, node: Node) -> np.ndarray:
    if g.shape == node.shape:
        return g
    return np.asarray(g.sum(dtype=np.float64), dtype=node.dtype).reshape(node.shape)


def _binary_operands(a, b, op):
    if not isinstance(a, Node) and not isinstance(b, Node):
        raise TypeError(f"{op}: at least one operand must be a Node")
    like = a if isinstance(a, Node) else b
    a, b = as_node(a, like), as_node(b, like)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")
    return a, b


def _bcast_value(x: Node) -> np.ndarray:
    return x.value.reshape(()) if x.size == 1 and x.value.ndim > 0 else x.value


def add(a, b) -> Node:
    a, b = _binary_operands(a, b, "add")
    out = _bcast_value(a) + _bcast_value(b)
    out = np.asarray(out, dtype=np.result_type(a.dtype, b.dtype))
    if out.shape == () and (a.value.ndim or b.value.ndim):
        out = out.reshape(a.shape if a.value.ndim >= b.value.ndim else b.shape)
    return _make(out, (a, b), "add", lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Node:
    a, b = _binary_operands(a, b, "sub")
    out = _bcast_value(a) - _bcast_value(b)
    out = np.asarray(out, dtype=np.result_type(a.dtype, b.dtype))
    if out.shape == () and (a.value.ndim or b.value.ndim):
        out = out.reshape(a.shape if a.value.ndim >= b.value.ndim else b.shape)
    return _make(out, (a, b), "sub", lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Node:
    """Elementwise (Hadamard) product."""
    a, b = _binary_operands(a, b, "mul")
    av, bv = _bcast_value(a), _bcast_value(b)
    out = np.asarray(av * bv, dtype=np.result_type(a.dtype, b.dtype))
    if out.shape == () and (a.value.ndim or b.value.ndim):
        out = out.reshape(a.shape if a.value.ndim >= b.value.ndim else b.shape)

    def bw(g):
        ga = _reduce_to(g * bv, a) if a.requires_grad else None
        gb = _reduce_to(g * av, b) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), "mul", bw)


def unary(x: Node, fwd: Callable, dfwd: Callable, op: str) -> Node:
    """Elementwise primitive from a forward map and its derivative.

    ``dfwd(x_value, out_value)`` returns the local derivative.
    """
    out = np.asarray(fwd(x.value), dtype=x.dtype)
    return _make(out, (x,), op, lambda g: (g * dfwd(x.value, out),))


def relu(x: Node) -> Node:
    # subgradient at 0 is 0
    return unary(x, lambda v: np.maximum(v, 0), lambda v, o: (v > 0).astype(v.dtype), "relu")


def tanh(x: Node) -> Node:
    return unary(x, np.tanh, lambda v, o: 1 - o * o, "tanh")


def sigmoid(x: Node) -> Node:
    return unary(x, expit, lambda v, o: o * (1 - o), "sigmoid")


def exp(x: Node) -> Node:
    return unary(x, np.exp, lambda v, o: o, "exp")


def abs_(x: Node) -> Node:
    return unary(x, np.abs, lambda v, o: np.sign(v), "abs")


def sum_(x: Node, axis=None) -> Node:
    out = np.asarray(x.value.sum(axis=axis, dtype=np.float64), dtype=x.dtype)
    shape = x.shape

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(x.dtype),)

    return _make(out, (x,), "sum", bw)


def mean(x: Node, axis=None) -> Node:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis), 1.0 / n)


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    ref = nodes[0].shape
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(n.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: cannot join shapes {ref} and {n.shape} along axis {axis}")
    out = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(nodes)))

    return _make(out, nodes, "concat", bw)


def take_channels(x: Node, start: int, stop: int) -> Node:
    """Slice ``x[start:stop]`` along the channel axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"take_channels: bad range [{start}, {stop}) for shape {x.shape}")
    out = x.value[start:stop].copy()

    def bw(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        return (full,)

    return _make(out, (x,), "take_channels", bw)


def reshape(x: Node, shape: Sequence[int]) -> Node:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _make(x.value.reshape(shape), (x,), "reshape", lambda g: (g.reshape(x.shape),))


def take_columns(x: Node, start: int, stop: int) -> Node:
    """Slice ``x[:, start:stop]`` of a 2D weight."""
    if x.value.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"take_columns: bad range [{start}, {stop}) for shape {x.shape}")
    out = np.ascontiguousarray(x.value[:, start:stop])

    def bw(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (x,), "take_columns", bw)


def split(x: Node, sizes: Sequence[int]) -> list[Node]:
    if sum(sizes) != x.shape[0]:
        raise ShapeError(f"split: sizes {tuple(sizes)} do not cover shape {x.shape}")
    bounds = np.cumsum([0] + list(sizes))
    return [take_channels(x, int(bounds[i]), int(bounds[i + 1])) for i in range(len(sizes))]


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """Per-pixel linear map (1x1 convolution) over the channel axis.

    ``x`` is (Cin, ...spatial), ``w`` is (Cout, Cin), ``b`` is (Cout,).
    """
    if w.value.ndim != 2 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"linear: weight {w.shape} does not match input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    spatial = x.shape[1:]
    xf = x.value.reshape(x.shape[0], -1)
    out = w.value @ xf
    if b is not None:
        out = out + b.value[:, None]
    out = out.reshape((w.shape[0],) + spatial)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gf = g.reshape(g.shape[0], -1)
        gx = (w.value.T @ gf).reshape(x.shape) if x.requires_grad else None
        gw = gf @ xf.T if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, gf.sum(axis=1, dtype=np.float64).astype(b.dtype)

    return _make(out, parents, "linear", bw)


def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, 3, 3, h, w), dtype=xp.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * 9, h * w)


def conv3x3(x: Node, w: Node, b: Node | None = None) -> Node:
    """3x3 convolution, stride 1, zero padding 1.

    ``x`` is (Cin, H, W), ``w`` is (Cout, Cin, 3, 3), ``b`` is (Cout,).
    """
    if x.value.ndim != 3 or w.value.ndim != 4 or w.shape[1:] != (x.shape[0], 3, 3):
        raise ShapeError(f"conv3x3: weight {w.shape} does not match input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv3x3: bias {b.shape} does not match weight {w.shape}")
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x.value, ((0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, h, wd)
    wm = w.value.reshape(cout, cin * 9)
    out = wm @ cols
    if b is not None:
        out = out + b.value[:, None]
    out = out.reshape(cout, h, wd)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gf = g.reshape(cout, h * wd)
        gw = (gf @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wm.T @ gf).reshape(cin, 3, 3, h, wd)
            gxp = np.zeros((cin, h + 2, wd + 2), dtype=x.dtype)
            for dy in range(3):
                for dx in range(3):
                    gxp[:, dy:dy + h, dx:dx + wd] += dcols[:, dy, dx]
            gx = gxp[:, 1:-1, 1:-1]
        if b is None:
            return gx, gw
        return gx, gw, gf.sum(axis=1, dtype=np.float64).astype(b.dtype)

    return _make(out, parents, "conv3x3", bw)


def softmax(x: Node, axis: int) -> Node:
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), "softmax", bw)


def group_mean(x: Node, groups: int) -> Node:
    """Average consecutive channel blocks: (C, ...) -> (groups, ...)."""
    c = x.shape[0]
    if groups < 1 or c % groups:
        raise ShapeError(f"group_mean: {groups} groups do not divide shape {x.shape}")
    k = c // groups
    out = x.value.reshape((groups, k) + x.shape[1:]).mean(axis=1, dtype=np.float64).astype(x.dtype)

    def bw(g):
        gg = np.repeat(g[:, None], k, axis=1) / k
        return (gg.reshape(x.shape).astype(x.dtype),)

    return _make(out, (x,), "group_mean", bw)


def shift_stack(x: Node, depth: int) -> Node:
    """Stack horizontal shifts: out[c, d, y, u] = x[c, y, u - d], zero beyond the border."""
    if x.value.ndim != 3:
        raise ShapeError(f"shift_stack: expected (C, H, W), got {x.shape}")
    c, h, w = x.shape
    out = np.zeros((c, depth, h, w), dtype=x.dtype)
    for d in range(min(depth, w)):
        out[:, d, :, d:] = x.value[:, :, :w - d]

    def bw(g):
        gx = np.zeros_like(x.value)
        for d in range(min(depth, w)):
            gx[:, :, :w - d] += g[:, d, :, d:]
        return (gx,)

    return _make(out, (x,), "shift_stack", bw)


def repeat_disparity(x: Node, depth: int) -> Node:
    """(C, H, W) -> (C, depth, H, W) by repetition along a new disparity axis."""
    if x.value.ndim != 3:
        raise ShapeError(f"repeat_disparity: expected (C, H, W), got {x.shape}")
    out = np.repeat(x.value[:, None], depth, axis=1)
    return _make(out, (x,), "repeat_disparity",
                 lambda g: (g.sum(axis=1, dtype=np.float64).astype(x.dtype),))


def avg_pool_disparity(x: Node) -> Node:
    """Average-pool the disparity axis of (G, D, H, W), kernel 2 stride 2.

    With odd D the trailing window holds a single slice and is averaged
    over that slice alone.
    """
    if x.value.ndim != 4:
        raise ShapeError(f"avg_pool_disparity: expected (G, D, H, W), got {x.shape}")
    g_, d, h, w = x.shape
    half = (d + 1) // 2
    out = np.empty((g_, half, h, w), dtype=x.dtype)
    full = d // 2
    out[:, :full] = 0.5 * (x.value[:, 0:2 * full:2] + x.value[:, 1:2 * full:2])
    if d % 2:
        out[:, full] = x.value[:, d - 1]

    def bw(g):
        gx = np.zeros_like(x.value)
        gx[:, 0:2 * full:2] = 0.5 * g[:, :full]
        gx[:, 1:2 * full:2] = 0.5 * g[:, :full]
        if d % 2:
            gx[:, d - 1] = g[:, full]
        return (gx,)

    return _make(out, (x,), "avg_pool_disparity", bw)


def gather_disparity(vol: Node, pos: Node, offsets: Iterable[float] = (0,)) -> Node:
    """Linear-interpolation gather along the disparity axis.

    ``vol`` is (G, D, H, W) and ``pos`` is (H, W) in fractional disparity
    units.  For every offset ``o`` the volume is sampled at ``pos + o``,
    clamped to [0, D-1].  The result stacks offsets major, groups minor:
    (len(offsets) * G, H, W).  Clamped positions receive no position
    gradient; their volume gradient lands on the boundary cell.
    """
    if vol.value.ndim != 4 or pos.shape != vol.shape[2:]:
        raise ShapeError(f"gather_disparity: volume {vol.shape} does not match positions {pos.shape}")
    g_, d, h, w = vol.shape
    offsets = np.asarray(list(offsets), dtype=np.float64)
    n = len(offsets)
    p = pos.value.astype(np.float64)[None] + offsets[:, None, None]  # (n, H, W)
    pc = np.clip(p, 0.0, d - 1.0)
    i0 = np.floor(pc).astype(np.int64)
    if d > 1:
        i0 = np.minimum(i0, d - 2)
        i1 = i0 + 1
    else:
        i1 = i0
    frac = (pc - i0).astype(vol.dtype)
    inside = ((p > 0.0) & (p < d - 1.0)).astype(vol.dtype)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yy = np.broadcast_to(yy, (n, h, w))
    xx = np.broadcast_to(xx, (n, h, w))
    v0 = vol.value[:, i0, yy, xx]  # (G, n, H, W)
    v1 = vol.value[:, i1, yy, xx]
    out = (1 - frac) * v0 + frac * v1
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3)).reshape(n * g_, h, w)

    def bw(gr):
        gg = gr.reshape(n, g_, h, w).transpose(1, 0, 2, 3)  # (G, n, H, W)
        gvol = None
        if vol.requires_grad:
            base = (np.arange(g_)[:, None, None, None] * d) * (h * w) + (yy * w + xx)[None]
            idx = np.concatenate([(base + i0[None] * (h * w)).ravel(),
                                  (base + i1[None] * (h * w)).ravel()])
            wts = np.concatenate([(gg * (1 - frac)).ravel(), (gg * frac).ravel()])
            gvol = np.bincount(idx, weights=wts, minlength=vol.size).reshape(vol.shape)
        gpos = None
        if pos.requires_grad:
            slope = (v1 - v0) * inside
            gpos = (gg * slope).sum(axis=(0, 1), dtype=np.float64).astype(pos.dtype)
        return gvol, gpos

    return _make(out.astype(vol.dtype), (vol, pos), "gather_disparity", bw)


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    Upstream gradients are propagated through fresh buffers, so running
    backward twice without zeroing doubles every stored gradient.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    pending = {id(root): np.ones_like(root.value)}
    # fresh buffers are stored by reference; nothing below mutates them in place
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._grad is None:
            node._grad = g.copy() if not node.parents else g
        else:
            node._grad = node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype).reshape(parent.shape)
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


class ParamStore:
    """Ordered, named collection of learnable nodes.

    Initialization draws from a single seeded generator in insertion order,
    so identical ``add`` sequences yield identical stores.
    """

    def __init__(self, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.entries: "OrderedDict[str, Node]" = OrderedDict()
        self._rng = np.random.default_rng(self.seed)

    def add(self, name: str, shape: Sequence[int], init: str = "uniform", fan_in: int | None = None) -> Node:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            if fan_in is None:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = np.sqrt(1.0 / fan_in)
            value = self._rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        node = Node(value.astype(self.dtype), requires_grad=True, op=f"param:{name}")
        self.entries[name] = node
        return node

    def set(self, name: str, value) -> Node:
        node = Node(np.array(value, dtype=self.dtype), requires_grad=True, op=f"param:{name}")
        self.entries[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.entries if n.startswith(prefix)]

    def items(self):
        return self.entries.items()

    def zero_grad(self):
        for node in self.entries.values():
            node.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for node in self.entries.values():
            if node._grad is not None:
                total += float(np.sum(node._grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore(self.seed, dtype if dtype is not None else self.dtype)
        for name, node in self.entries.items():
            out.set(name, node.value)
        return out

    def zeros_like(self) -> "ParamStore":
        out = ParamStore(self.seed, self.dtype)
        for name, node in self.entries.items():
            out.set(name, np.zeros_like(node.value))
        return out


def grad_check(f: Callable[[Node], Node], x, step: float = 1e-3,
               coords: Sequence[int] | None = None) -> float:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Runs in float64.  Returns the maximum over probed coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  ``coords``
    restricts the probe to those flat indices.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(x, dtype=np.float64)
    node = Node(x0.copy(), requires_grad=True)
    out = f(node)
    _check_finite_scalar(out)
    backward(out)
    analytic = node.grad.reshape(-1)

    def evaluate(v):
        r = f(Node(v, requires_grad=False))
        _check_finite_scalar(r)
        return float(r.value.reshape(-1)[0])

    return _fd_compare(evaluate, x0, analytic, step, coords)


def grad_check_params(f: Callable[[ParamStore], Node], store: ParamStore, names: Sequence[str],
                      step: float = 1e-3, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> dict[str, float]:
    """Gradient check of scalar ``f(store)`` with respect to selected parameters.

    ``store`` is copied to float64.  When ``max_coords`` is set, each
    parameter is probed at that many randomly drawn coordinates.
    Returns the max relative error per parameter name.
    """
    work = store.copy(np.float64)
    work.zero_grad()
    out = f(work)
    _check_finite_scalar(out)
    backward(out)
    rng = rng if rng is not None else np.random.default_rng(0)
    errors = {}
    for name in names:
        param = work[name]
        analytic = param.grad.reshape(-1).copy()
        base = param.value.copy()
        coords = None
        if max_coords is not None and base.size > max_coords:
            coords = rng.choice(base.size, size=max_coords, replace=False)

        def evaluate(v, name=name):
            work.entries[name].value = v
            r = f(work)
            _check_finite_scalar(r)
            return float(r.value.reshape(-1)[0])

        errors[name] = _fd_compare(evaluate, base, analytic, step, coords)
        work.entries[name].value = base
    return errors


def _fd_compare(evaluate, x0, analytic, step, coords) -> float:
    flat = x0.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        xp = flat.copy()
        xp[i] += step
        fp = evaluate(xp.reshape(x0.shape))
        xm = flat.copy()
        xm[i] -= step
        fm = evaluate(xm.reshape(x0.shape))
        numeric = (fp - fm) / (2 * step)
        a = float(analytic[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


def _check_finite_scalar(r: Node):
    if r.size != 1:
        raise ShapeError(f"grad_check: function must return a scalar, got shape {r.shape}")
    if not np.all(np.isfinite(r.value)):
        raise NonFiniteError("grad_check: function produced a non-finite value")
