"""Reverse-mode automatic differentiation over dense numpy arrays.

Just enough machinery for the predictor models in this package: a Node
wraps an ndarray, operations build a DAG, and backward() walks it once in
reverse topological order. Conventions:

* float64 is the reference precision; float32 works if the caller feeds
  float32 arrays (ops preserve the operand dtype, python scalars are cast).
* Gradients accumulate: each backward() adds its pass-local gradients into
  ``node.grad``. Calling backward twice without zero_grad doubles them.
  The caller (the optimizer loop) is responsible for zeroing.
* Broadcasting is limited to python scalars; array operands must match
  shapes exactly. Layer code reshapes explicitly.
* Complex data never enters the graph; split to real/imaginary first.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, NumericError, ShapeError

__all__ = [
    "Node", "constant", "parameter", "as_finite_array", "backward",
    "matmul", "bmm", "swap_last2", "add", "sub", "mul", "scale",
    "relu", "exp", "tanh", "sigmoid", "sqrt_eps", "softmax_rows",
    "normalize_axis", "reshape", "concat", "sum_all",
    "depthwise_conv1d", "weighted_sum",
]


class Node:
    """A value in the computation graph.

    ``value`` is always an ndarray (0-d for scalars). ``grad`` starts as
    None and is filled/accumulated by backward(). Only nodes with
    ``requires_grad`` participate in the backward pass.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # small amount of operator sugar so layer code stays readable
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)


def constant(value, dtype=None):
    """Graph constant; no gradient is tracked through it."""
    arr = np.asarray(value, dtype=dtype) if dtype is not None else np.asarray(value)
    if arr.dtype.kind not in "f":
        arr = arr.astype(np.float64)
    return Node(arr)


def parameter(value, dtype=None):
    """Trainable leaf."""
    arr = np.array(value, dtype=dtype if dtype is not None else np.float64)
    return Node(arr, requires_grad=True)


def as_finite_array(value, dtype=np.float64, name="array"):
    """Validate external input once at the boundary: dense, finite, float."""
    arr = np.asarray(value, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return arr


def _as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, vjp):
    out_req = any(p.requires_grad for p in parents)
    out = Node(value, requires_grad=out_req)
    if out_req:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _scalar_like(c, arr):
    # keep float32 graphs float32: python scalars adopt the array dtype
    return arr.dtype.type(c)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """``a @ b`` with ``b`` strictly 2-D; ``a`` may carry leading batch axes.

    Backward: dL/da = g @ b^T, dL/db = a^T @ g (summed over batch axes).
    """
    a, b = _as_node(a), _as_node(b)
    if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    out = np.matmul(av, bv)

    def vjp(g):
        lead = tuple(range(av.ndim - 1))
        return (np.matmul(g, bv.T), np.tensordot(av, g, axes=(lead, lead)))

    return _make(out, (a, b), vjp)


def bmm(a, b):
    """Batched matmul ``[B,m,k] @ [B,k,n]``."""
    a, b = _as_node(a), _as_node(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    out = np.matmul(av, bv)

    def vjp(g):
        return (np.matmul(g, bv.swapaxes(-1, -2)), np.matmul(av.swapaxes(-1, -2), g))

    return _make(out, (a, b), vjp)


def swap_last2(x):
    x = _as_node(x)
    if x.ndim < 2:
        raise ShapeError(f"swap_last2 needs rank >= 2, got {x.shape}")
    return _make(x.value.swapaxes(-1, -2), (x,), lambda g: (g.swapaxes(-1, -2),))


# ---------------------------------------------------------------------------
# elementwise

def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a, b):
    if not isinstance(b, Node) and np.isscalar(b):
        a = _as_node(a)
        return _make(a.value + _scalar_like(b, a.value), (a,), lambda g: (g,))
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("add", a, b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    if not isinstance(b, Node) and np.isscalar(b):
        a = _as_node(a)
        return _make(a.value - _scalar_like(b, a.value), (a,), lambda g: (g,))
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("sub", a, b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    if not isinstance(b, Node) and np.isscalar(b):
        return scale(a, b)
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, c):
    """Multiply by a python scalar (cast to the array dtype)."""
    x = _as_node(x)
    cv = _scalar_like(c, x.value)
    return _make(x.value * cv, (x,), lambda g: (g * cv,))


def relu(x):
    x = _as_node(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, x.value.dtype.type(0)), (x,), lambda g: (g * mask,))


def exp(x):
    x = _as_node(x)
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,))


def tanh(x):
    x = _as_node(x)
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = _as_node(x)
    v = x.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), vjp)


def sqrt_eps(x, eps=1e-12):
    """sqrt(x + eps); raises on negative arguments after the offset."""
    x = _as_node(x)
    shifted = x.value + _scalar_like(eps, x.value)
    if np.any(shifted < 0):
        raise NumericError("sqrt_eps: negative argument after epsilon offset")
    out = np.sqrt(shifted)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# structured ops

def softmax_rows(x):
    """Softmax over the last axis, max-subtracted for stability."""
    x = _as_node(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), vjp)


def normalize_axis(x, axis, eps):
    """(x - mean) / sqrt(var + eps) along ``axis`` (population variance)."""
    x = _as_node(x)
    v = x.value
    mean = v.mean(axis=axis, keepdims=True)
    var = np.square(v - mean).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + _scalar_like(eps, v))
    y = (v - mean) * inv

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gym) * inv,)

    return _make(y, (x,), vjp)


def reshape(x, shape):
    x = _as_node(x)
    orig = x.value.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def concat(nodes, axis):
    nodes = [_as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out, nodes, vjp)


def sum_all(x):
    """Sum of every element; the usual loss reduction. Returns a 0-d node."""
    x = _as_node(x)
    shape = x.value.shape

    def vjp(g):
        return (np.full(shape, g, dtype=x.value.dtype),)

    return _make(np.asarray(x.value.sum()), (x,), vjp)


def depthwise_conv1d(x, w):
    """Per-channel 1-D convolution along axis 1 of ``x`` [B, N, C].

    Kernel ``w`` is [K, C] with K odd; zero "same" padding, stride 1:
    out[b, i, c] = sum_k w[k, c] * x_pad[b, i + k, c].
    """
    x, w = _as_node(x), _as_node(w)
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"depthwise_conv1d: need [B,N,C] and [K,C], got {x.shape}, {w.shape}")
    k, c = w.value.shape
    if c != x.shape[2]:
        raise ShapeError(f"depthwise_conv1d: channel mismatch {x.shape} vs kernel {w.shape}")
    if k % 2 == 0 or k < 1:
        raise ShapeError(f"depthwise_conv1d: kernel length must be odd, got {k}")
    half = (k - 1) // 2
    n = x.shape[1]
    xp = np.pad(x.value, ((0, 0), (half, half), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # [B, N, C, K]
    out = np.einsum("bnck,kc->bnc", view, w.value)

    def vjp(g):
        gw = np.einsum("bnck,bnc->kc", view, g)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk:kk + n, :] += g * w.value[kk]
        return (gxp[:, half:half + n, :], gw)

    return _make(out, (x, w), vjp)


def weighted_sum(xs, w):
    """sum_t w[t] * xs[t] for a 1-D weight vector over same-shape arrays."""
    xs = [_as_node(x) for x in xs]
    w = _as_node(w)
    if w.ndim != 1 or w.shape[0] != len(xs):
        raise ShapeError(f"weighted_sum: weight shape {w.shape} vs {len(xs)} operands")
    for x in xs[1:]:
        _check_same_shape("weighted_sum", xs[0], x)
    vals = [x.value for x in xs]
    out = np.zeros_like(vals[0])
    for t, v in enumerate(vals):
        out = out + w.value[t] * v

    def vjp(g):
        gw = np.array([np.sum(g * v) for v in vals], dtype=w.value.dtype)
        return tuple(g * w.value[t] for t in range(len(vals))) + (gw,)

    return _make(out, (*xs, w), vjp)


# ---------------------------------------------------------------------------
# backward

def backward(loss):
    """Backpropagate from a scalar loss node.

    Returns a map {node: dL/d(node)} for every requires_grad node reached,
    and adds the same gradients into each node's ``.grad`` (accumulating
    across calls until the caller zeroes them).
    """
    if not isinstance(loss, Node):
        raise ShapeError("backward expects a Node")
    if loss.value.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.value.shape}")

    # iterative post-order DFS over parents
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    local = {id(loss): np.ones_like(loss.value)}
    for node in reversed(topo):
        g = local.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            acc = local.get(id(parent))
            local[id(parent)] = pg if acc is None else acc + pg

    grads = {}
    for node in topo:
        g = local.get(id(node))
        if g is None or not node.requires_grad:
            continue
        g = np.asarray(g)
        node.grad = g.copy() if node.grad is None else node.grad + g
        grads[node] = g
    return grads
