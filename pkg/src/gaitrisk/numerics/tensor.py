"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checks) and record a backward closure per operation. Only the operations
the recognition model actually needs are provided. Outputs of an operation
are never mutated afterwards; a backward pass walks the recorded graph in
reverse topological order exactly once.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels

_FLOAT_TYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient plumbing --------------------------------------------------
    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False):
        """Add g into the gradient buffer. own=True promises that g is a
        freshly allocated array no other in-flight tensor aliases, so it can
        be adopted without a defensive copy."""
        if self.grad is None:
            if own and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode pass from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------
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

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to the given broadcast-source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape), own=True)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            b._accumulate(gb, own=gb is not g)

    return _result(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a._accumulate(ga, own=ga is not g)
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape), own=True)

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), own=True)

    return _result(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a._accumulate(np.outer(g, b.data) if a.data.ndim == 2
                              else g * b.data, own=True)
            else:
                a._accumulate(g @ b.data.T, own=True)
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accumulate(np.outer(a.data, g) if b.data.ndim == 2
                              else g * a.data, own=True)
            else:
                b._accumulate(a.data.T @ g, own=True)

    return _result(data, (a, b), backward)


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    old = t.data.shape
    data = t.data.reshape(shape)

    def backward(g):
        t._accumulate(np.ascontiguousarray(g).reshape(old), own=True)

    return _result(data, (t,), backward)


def transpose(t: Tensor, axes) -> Tensor:
    t = as_tensor(t)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(t.data.transpose(axes))

    def backward(g):
        t._accumulate(np.ascontiguousarray(g.transpose(inv)), own=True)

    return _result(data, (t,), backward)


def leaky_relu(t: Tensor, slope: float = 0.1) -> Tensor:
    """max(x, slope*x); the subgradient at 0 takes the negative-side slope."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    t = as_tensor(t)
    x = np.ascontiguousarray(t.data)
    s = x.dtype.type(slope)
    data = np.empty_like(x)
    kernels.leaky_forward(x.reshape(-1), s, data.reshape(-1))

    def backward(g):
        dx = np.empty_like(x)
        kernels.leaky_backward(x.reshape(-1),
                               np.ascontiguousarray(g).reshape(-1), s,
                               dx.reshape(-1))
        t._accumulate(dx, own=True)

    return _result(data, (t,), backward)


def relu(t: Tensor) -> Tensor:
    return leaky_relu(t, 0.0)


def sqrt(t: Tensor) -> Tensor:
    t = as_tensor(t)
    data = np.sqrt(t.data)

    def backward(g):
        t._accumulate(g * (0.5 / data), own=True)

    return _result(data, (t,), backward)


def sum_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            t._accumulate(np.broadcast_to(g, t.data.shape).copy(), own=True)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            t._accumulate(np.broadcast_to(gg, t.data.shape).copy(), own=True)

    return _result(data, (t,), backward)


def mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    count = t.data.size if axis is None else np.prod(
        [t.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(t, axis=axis, keepdims=keepdims), 1.0 / float(count))


def logsumexp(t: Tensor, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(x))) along one axis."""
    t = as_tensor(t)
    m = t.data.max(axis=axis, keepdims=True)
    shifted = np.exp(t.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data = np.squeeze(m + np.log(total), axis=axis)
    softmax = shifted / total

    def backward(g):
        t._accumulate(np.expand_dims(g, axis) * softmax, own=True)

    return _result(data, (t,), backward)


def index_axis(t: Tensor, axis: int, i: int) -> Tensor:
    """Select index i along one axis (the axis is dropped)."""
    t = as_tensor(t)
    sl = [slice(None)] * t.data.ndim
    sl[axis] = i
    sl = tuple(sl)
    data = np.ascontiguousarray(t.data[sl])

    def backward(g):
        full = np.zeros_like(t.data)
        full[sl] = g
        t._accumulate(full, own=True)

    return _result(data, (t,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(sl)]), own=True)

    return _result(data, tuple(tensors), backward)


def gather_index(t: Tensor, index: np.ndarray) -> Tensor:
    """Pick t[i, index[i]] per row of a 2D tensor."""
    t = as_tensor(t)
    index = np.asarray(index)
    rows = np.arange(t.data.shape[0])
    data = t.data[rows, index]

    def backward(g):
        full = np.zeros_like(t.data)
        full[rows, index] = g
        t._accumulate(full, own=True)

    return _result(data, (t,), backward)


def flatten_max(t: Tensor, start_axis: int) -> Tensor:
    """Max over all axes from start_axis on; gradient flows to the first
    occurrence of the maximum."""
    t = as_tensor(t)
    lead = t.data.shape[:start_axis]
    flat = t.data.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(flat)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        t._accumulate(full.reshape(t.data.shape), own=True)

    return _result(data, (t,), backward)


# ---------------------------------------------------------------------------
# model-facing structured ops
# ---------------------------------------------------------------------------

def conv3d(x, kernel, bias) -> Tensor:
    """Same-padded, stride-1 3D convolution over (B, C, T, H, W) input.

    kernel is (C_out, C_in, kt, kh, kw) with odd extents; output keeps the
    input's T/H/W. Differentiable w.r.t. input, kernel and bias.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.data.ndim != 5:
        raise ValueError(f"conv3d input must be 5D (B,C,T,H,W), got {x.data.shape}")
    if kernel.data.ndim != 5:
        raise ValueError(f"conv3d kernel must be 5D, got {kernel.data.shape}")
    co, ci, kt, kh, kw = kernel.data.shape
    if x.data.shape[1] != ci:
        raise ValueError(
            f"kernel expects {ci} input channels, input has {x.data.shape[1]}")
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {(kt, kh, kw)}")
    if bias.data.shape != (co,):
        raise ValueError(f"bias must have shape ({co},), got {bias.data.shape}")
    if kernel.data.dtype != x.data.dtype or bias.data.dtype != x.data.dtype:
        raise ValueError("kernel and bias dtypes must match the input dtype")

    track = _grad_enabled and (x.requires_grad or kernel.requires_grad
                               or bias.requires_grad)
    if not track:
        return Tensor(kernels.conv3d_forward(x.data, kernel.data, bias.data))

    data, xp = kernels.conv3d_forward_padded(x.data, kernel.data, bias.data)

    def backward(g):
        dx, dk, db = kernels.conv3d_backward(xp, kernel.data, g,
                                             need_dx=x.requires_grad)
        if x.requires_grad:
            x._accumulate(dx, own=True)
        if kernel.requires_grad:
            kernel._accumulate(dk, own=True)
        if bias.requires_grad:
            bias._accumulate(db, own=True)

    return _result(data, (x, kernel, bias), backward)


def maxpool_spatial(x) -> Tensor:
    """2x2 stride-2 max pooling over the trailing two axes of (B, C, T, H, W).

    Odd trailing rows/columns are pooled over the partial window; the
    gradient routes to the first maximal element of each window.
    """
    x = as_tensor(x)
    if x.data.ndim != 5:
        raise ValueError(f"maxpool_spatial input must be 5D, got {x.data.shape}")
    b, c, t, h, w = x.data.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    flat = np.ascontiguousarray(x.data).reshape(b * c * t, h, w)
    data = np.empty((b * c * t, ho, wo), dtype=x.data.dtype)
    idx = np.empty((b * c * t, ho, wo), dtype=np.uint8)
    kernels.pool2x2_forward(flat, data, idx)
    data = data.reshape(b, c, t, ho, wo)

    def backward(g):
        dx = np.zeros((b * c * t, h, w), dtype=x.data.dtype)
        kernels.pool2x2_backward(
            np.ascontiguousarray(g).reshape(b * c * t, ho, wo), idx, dx)
        x._accumulate(dx.reshape(b, c, t, h, w), own=True)

    return _result(data, (x,), backward)


def temporal_group_compress(x, weight) -> Tensor:
    """Grouped, weight-shared temporal compression of (B, C, T, H, W):
    consecutive groups of len(weight) frames reduce to one frame each via
    the shared weight vector; T -> T / len(weight)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 5:
        raise ValueError(f"input must be 5D (B,C,T,H,W), got {x.data.shape}")
    if weight.data.ndim != 1:
        raise ValueError("TCL weight must be a vector")
    b, c, t, h, w = x.data.shape
    g = weight.data.shape[0]
    if t % g:
        raise ValueError(f"group size {g} does not divide temporal length {t}")
    if weight.data.dtype != x.data.dtype:
        raise ValueError("TCL weight dtype must match the input dtype")
    groups = t // g
    xg = np.ascontiguousarray(x.data).reshape(b * c, groups, g, h * w)
    data = np.empty((b * c, groups, h * w), dtype=x.data.dtype)
    kernels.tcl_forward_kernel(xg, weight.data, data)
    data = data.reshape(b, c, groups, h, w)

    def backward(grad):
        dx = np.empty_like(xg)
        dw = np.zeros_like(weight.data)
        kernels.tcl_backward_kernel(
            xg, weight.data, np.ascontiguousarray(grad).reshape(
                b * c, groups, h * w), dx, dw)
        if x.requires_grad:
            x._accumulate(dx.reshape(b, c, t, h, w), own=True)
        if weight.requires_grad:
            weight._accumulate(dw, own=True)

    return _result(data, (x, weight), backward)


def fully_connected(x, weight, bias) -> Tensor:
    """Affine map y = x @ W.T + b for x of shape (D,) or (B, D)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ValueError(
            f"input feature dim {x.data.shape[-1]} does not match weight inner dim "
            f"{weight.data.shape[1]}")
    return add(matmul(x, transpose(weight, (1, 0))), bias)
