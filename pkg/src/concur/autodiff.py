"""Dense-tensor engine with reverse-mode automatic differentiation.

Define-by-run: every primitive records its inputs and a backward closure on
the output tensor, and ``backward`` replays the recorded graph in reverse
topological order. Arrays are float32 by default; pass float64 data (or
``dtype=np.float64``) for gradient-check work, where finite-difference
tolerances are unreachable in single precision.

Broadcasting is supported only to the extent the models here need it
(adding/scaling per-channel vectors against batched feature maps).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class DegenerateInputError(ValueError):
    """Input is outside a primitive's domain (e.g. zero-norm vector)."""


class GraphError(RuntimeError):
    """Backward called on a non-scalar, detached, or already-consumed graph."""


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff graph.

    ``grad`` is populated (same shape as ``data``) on every requires-grad
    leaf after a backward pass; tensors that do not require grad never own a
    gradient buffer. Gradient buffers are never shared between tensors.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._done = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("tensor division only supports scalar divisors")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self):
        return backward(self)


def _wrap(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, op, backward_fn) -> Tensor:
    """Build an op output; constant subgraphs are folded into plain leaves."""
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    else:
        out = Tensor(data)
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise primitives --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a.dtype)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", backward_fn)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward_fn(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), "neg", backward_fn)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", backward_fn)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)

    def backward_fn(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), "scale", backward_fn)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0

    def backward_fn(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0), (a,), "relu", backward_fn)


def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def backward_fn(g):
        a._accumulate(g * data)

    return _make(data, (a,), "exp", backward_fn)


def log(a) -> Tensor:
    a = _wrap(a)

    def backward_fn(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), "log", backward_fn)


def square(a) -> Tensor:
    a = _wrap(a)

    def backward_fn(g):
        a._accumulate(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), "square", backward_fn)


def absval(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)

    def backward_fn(g):
        a._accumulate(g * sign)

    return _make(np.abs(a.data), (a,), "abs", backward_fn)


# -- reductions and reshaping -------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None) -> Tensor:
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim)
    data = a.data.sum(axis=axes if axis is not None else None)

    def backward_fn(g):
        gk = np.expand_dims(g, axes) if a.data.ndim else g
        a._accumulate(np.broadcast_to(gk, a.shape).copy())

    return _make(data, (a,), "sum", backward_fn)


def mean(a, axis=None) -> Tensor:
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.data.ndim else 1
    data = a.data.mean(axis=axes if axis is not None else None)

    def backward_fn(g):
        gk = np.expand_dims(g, axes) if a.data.ndim else g
        a._accumulate(np.broadcast_to(gk, a.shape) / count)

    return _make(data, (a,), "mean", backward_fn)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape

    def backward_fn(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), "reshape", backward_fn)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: needs at least one input")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), "concat", backward_fn)


def take(a, idx) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter."""
    a = _wrap(a)
    data = a.data[idx]

    def backward_fn(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g

    return _make(np.array(data, copy=True), (a,), "take", backward_fn)


# -- contractions --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: expected 2-d @ 1-or-2-d, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        if b.data.ndim == 1:
            if a.requires_grad:
                a._accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        else:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

    return _make(data, (a, b), "matmul", backward_fn)


def dot(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: expected equal-length vectors, got {a.shape} and {b.shape}")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data @ b.data, (a, b), "dot", backward_fn)


def conv3d(x, w, stride=1, padding=0) -> Tensor:
    """Strided, zero-padded 3-d convolution (cross-correlation), no dilation.

    x: (N, C_in, T, H, W), w: (C_out, C_in, kt, kh, kw).
    """
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 5 or w.data.ndim != 5:
        raise ShapeError(f"conv3d: expected 5-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d: input channels differ, input {x.shape} vs kernel {w.shape}")
    st, sh, sw = (stride, stride, stride) if isinstance(stride, int) else stride
    pt, ph, pw = (padding, padding, padding) if isinstance(padding, int) else padding
    kt, kh, kw = w.shape[2:]
    if any(x.shape[2 + i] + 2 * p < k for i, (p, k) in enumerate(((pt, kt), (ph, kh), (pw, kw)))):
        raise ShapeError(f"conv3d: kernel {w.shape} larger than padded input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    # win: (N, C_in, To, Ho, Wo, kt, kh, kw)
    out = np.tensordot(win, w.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    n_out, _, t_out, h_out, w_out = out.shape

    def backward_fn(g):
        if w.requires_grad:
            w._accumulate(np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kh):
                    for l in range(kw):
                        contrib = np.tensordot(g, w.data[:, :, i, j, l], axes=([1], [0]))
                        gxp[
                            :,
                            :,
                            i : i + st * t_out : st,
                            j : j + sh * h_out : sh,
                            l : l + sw * w_out : sw,
                        ] += np.moveaxis(contrib, -1, 1)
            tt, hh, ww = x.shape[2:]
            x._accumulate(gxp[:, :, pt : pt + tt, ph : ph + hh, pw : pw + ww])

    return _make(out, (x, w), "conv3d", backward_fn)


# -- normalization and log-space ------------------------------------------------


def l2_normalize(a, axis=-1, eps=1e-12) -> Tensor:
    a = _wrap(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    norm_safe = np.maximum(norm, eps)
    data = a.data / norm_safe

    def backward_fn(g):
        # d(x/|x|) = (g - y * <y, g>) / |x|
        inner = (data * g).sum(axis=axis, keepdims=True)
        a._accumulate((g - data * inner) / norm_safe)

    return _make(data, (a,), "l2_normalize", backward_fn)


def log_sum_exp(a, axis=None) -> Tensor:
    """Overflow-safe log(sum(exp(a))) with max subtraction."""
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim) if a.data.ndim else ()
    m = a.data.max(axis=axes if axis is not None else None, keepdims=True) if a.data.ndim else a.data
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axes if axis is not None else None, keepdims=True) if a.data.ndim else shifted
    data = (m + np.log(total)).reshape(
        () if axis is None else tuple(n for i, n in enumerate(a.shape) if i not in axes)
    )
    softmax = shifted / total

    def backward_fn(g):
        gk = np.expand_dims(g, axes) if (a.data.ndim and axis is not None) else g
        a._accumulate(softmax * gk)

    return _make(data, (a,), "log_sum_exp", backward_fn)


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two vectors: <a, b> / (|a| |b|)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: expected equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_sim: zero-norm input")
    c = float(a.data @ b.data) / (na * nb)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (b.data / (na * nb) - c * a.data / (na * na)))
        if b.requires_grad:
            b._accumulate(g * (a.data / (na * nb) - c * b.data / (nb * nb)))

    return _make(np.asarray(c, dtype=a.dtype), (a, b), "cosine_sim", backward_fn)


# -- backward pass ----------------------------------------------------------------


def topo_order(root: Tensor) -> list:
    """Nodes reachable from ``root``, parents before children."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.data.shape != ():
        raise GraphError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad or loss._backward is None:
        raise GraphError("backward: loss is not connected to any differentiable leaf")
    if loss._done:
        raise GraphError("backward: graph already consumed; rebuild it before calling again")
    loss._done = True

    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(build, leaves, samples_per_leaf=10, h=1e-4, rng=None) -> float:
    """Compare analytic gradients of ``build()`` against central differences.

    ``build`` must rebuild and return the scalar loss from ``leaves`` on every
    call. Returns the max over sampled coordinates of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Use float64
    leaves; float32 cannot meet finite-difference tolerances.
    """
    for leaf in leaves:
        leaf.zero_grad()
    backward(build())
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    ids = rng.gen if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for leaf, ref in zip(leaves, analytic):
        n = leaf.data.size
        coords = np.arange(n) if n <= samples_per_leaf else ids.choice(n, samples_per_leaf, replace=False)
        flat = leaf.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(build().data)
            flat[c] = orig - h
            down = float(build().data)
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            a = float(ref.reshape(-1)[c])
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst
