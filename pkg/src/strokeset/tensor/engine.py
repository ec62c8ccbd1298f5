"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new immutable :class:`Tensor` that remembers its parents
and a closure mapping the output gradient to parent gradients.  A
:class:`Graph` records the nodes created while running a function so the
forward pass can be replayed into a backward pass over named parameters.
"""
from __future__ import annotations

import contextlib
import functools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NumericError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


_state = {"grad": True, "tape": None}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"

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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"output gradient shape {grad.shape} != tensor shape {self.shape}")
        order = _topological(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological(root):
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(name):
    """Wrap an op so numpy shape failures surface as ShapeError naming the op."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ShapeError:
                raise
            except ValueError as exc:
                shapes = [a.shape for a in args if isinstance(a, Tensor)]
                raise ShapeError(f"{name}: {exc} (operand shapes {shapes})") from None

        return wrapper

    return deco


def _node(op, data, parents, backward):
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    needs = _state["grad"] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    out.op = op
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    tape = _state["tape"]
    if tape is not None:
        tape.append(out)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


@_op("add")
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


@_op("sub")
def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


@_op("mul")
def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


@_op("div")
def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _node("div", out, (a, b), backward)


@_op("power")
def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return _node("power", a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


@_op("exp")
def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node("exp", out, (a,), lambda g: (g * out,))


@_op("log")
def log(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _node("log", out, (a,), lambda g: (g / a.data,))


@_op("relu")
def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@_op("sigmoid")
def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


@_op("norm")
def norm(a, axis=-1):
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def backward(g):
        ne = np.expand_dims(n, axis)
        safe = np.where(ne > 0, ne, 1.0)
        return (np.where(ne > 0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return _node("norm", n, (a,), backward)


@_op("bce_with_logits")
def bce_with_logits(logits, target):
    """Elementwise binary cross-entropy on logits; ``target`` is constant."""
    z = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    loss = np.maximum(z.data, 0.0) - z.data * t + np.log1p(np.exp(-np.abs(z.data)))
    return _node("bce_with_logits", loss, (z,),
                 lambda g: (_unbroadcast(g * (_sigmoid(z.data) - t), z.shape),))


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@_op("sum")
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node("sum", np.sum(a.data, axis=axes, keepdims=keepdims), (a,), backward)


@_op("mean")
def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _node("mean", np.mean(a.data, axis=axes, keepdims=keepdims), (a,), backward)


@_op("reshape")
def reshape(a, shape):
    a = as_tensor(a)
    return _node("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


@_op("transpose")
def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _node("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


@_op("getitem")
def getitem(a, index):
    a = as_tensor(a)

    def backward(g):
        full = np.zeros(a.shape)
        if _fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _node("getitem", a.data[index], (a,), backward)


@_op("concat")
def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------- linear algebra


@_op("matmul")
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node("matmul", a.data @ b.data, (a, b), backward)


@_op("softmax")
def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _node("softmax", out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


@_op("layer_norm")
def layer_norm(x, weight=None, bias=None, eps=1e-10):
    """Normalize over the last axis to zero mean and unit (biased) variance."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if weight is not None:
        weight = as_tensor(weight)
        parents.append(weight)
        out = out * weight.data
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
        out = out + bias.data

    def backward(g):
        dxhat = g * weight.data if weight is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if weight is not None:
            grads.append(_unbroadcast(g * xhat, weight.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _node("layer_norm", out, parents, backward)


# ---------------------------------------------------------------- convolution


def _im2col(x, k, stride, pad):
    """(B, C, H, W) -> columns (B*Ho*Wo, C*k*k) plus (Ho, Wo)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols, shape, k, stride, pad, ho, wo):
    """Scatter-add columns (B*Ho*Wo, C*k*k) back into an image of ``shape`` (unpadded)."""
    b, c, h, w = shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if k % stride == 0:
        # kernel offset i = stride * a + r lands on output row stride * (y + a) + r,
        # so the scatter becomes (k / stride)^2 block adds on a strided view
        s, q = stride, k // stride
        blocks = cols.reshape(b, ho, wo, c, q, s, q, s).transpose(4, 6, 0, 3, 1, 5, 2, 7)
        blocks = np.ascontiguousarray(blocks)            # (q, q, B, C, Ho, s, Wo, s)
        rows, cols_ = (ho + q - 1) * s, (wo + q - 1) * s
        big = np.zeros((b, c, ho + q - 1, s, wo + q - 1, s))
        for a in range(q):
            for bb in range(q):
                big[:, :, a:a + ho, :, bb:bb + wo, :] += blocks[a, bb]
        out = big.reshape(b, c, rows, cols_)[:, :, :hp, :wp]
        if rows < hp or cols_ < wp:
            out = np.pad(out, ((0, 0), (0, 0), (0, hp - rows), (0, wp - cols_)))
    else:
        cols = cols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        out = np.zeros((b, c, hp, wp))
        for i in range(k):
            for j in range(k):
                out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


@_op("conv2d")
def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of x (B, C, H, W) with weight (O, C, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    o, _, k, _ = weight.shape
    b = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
        out = out + bias.data
    out = out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = _col2im(gmat @ wmat, x.shape, k, stride, padding, ho, wo)
        gw = (gmat.T @ cols).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return tuple(grads)

    return _node("conv2d", np.ascontiguousarray(out), parents, backward)


@_op("conv_transpose2d")
def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution of x (B, Cin, H, W) with weight (Cin, Cout, k, k).

    Output size is (H - 1) * stride - 2 * padding + k.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} incompatible with weight {weight.shape}")
    b, cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    hout = (h - 1) * stride - 2 * padding + k
    wout = (w - 1) * stride - 2 * padding + k
    if hout < 1 or wout < 1:
        raise ShapeError(f"conv_transpose2d: empty output for input {x.shape}")
    wmat = weight.data.reshape(cin, -1)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    out = _col2im(xmat @ wmat, (b, cout, hout, wout), k, stride, padding, h, w)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
        out = out + bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        gcols, _, _ = _im2col(g, k, stride, padding)
        gx = (gcols @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
        gw = (xmat.T @ gcols).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node("conv_transpose2d", out, parents, backward)


# ---------------------------------------------------------------- composites


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C)."""
    return mean(x, axis=(2, 3))


def attention_pool(h, query, scale=None):
    """Pool a sequence h (B, N, D) with one query column (D, 1).

    Weights are softmax over positions of h @ query / sqrt(D).
    """
    d = h.shape[-1]
    scale = 1.0 / np.sqrt(d) if scale is None else scale
    scores = matmul(h, query) * scale                # (B, N, 1)
    weights = softmax(scores, axis=1)
    return tsum(h * weights, axis=1)                 # (B, D)


def reparameterize(mu, log_var, noise):
    """z = mu + exp(log_var / 2) * noise; ``noise`` is a constant draw."""
    return mu + exp(log_var * 0.5) * Tensor(noise)


# ---------------------------------------------------------------- graphs


class Graph:
    """A function of named parameters whose forward pass is recorded.

    ``fn`` is called with keyword tensors; it must build its result only from
    those inputs and ``parameters``.  ``nodes`` holds the op outputs in
    creation order, which is a topological order of the graph.
    """

    def __init__(self, fn, parameters):
        self.fn = fn
        self.parameters = dict(parameters)
        self.nodes = None
        self.output = None

    def forward(self, **inputs):
        tape = []
        prev = _state["tape"]
        _state["tape"] = tape
        try:
            out = self.fn(**{k: Tensor(v) if isinstance(v, (np.ndarray, list)) else v
                             for k, v in inputs.items()})
        finally:
            _state["tape"] = prev
        self.nodes = tape
        self.output = out
        return out

    def backward(self, output_gradient=None):
        if self.output is None:
            raise RuntimeError("backward called before forward")
        for p in self.parameters.values():
            p.grad = None
        self.output.backward(output_gradient)
        return {name: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
                for name, p in self.parameters.items()}
