"""Parameter containers and the layers shared by every network in the package."""
import math

import numpy as np

from . import engine as E
from .engine import Tensor
from .rng import stream


class Parameter(Tensor):
    """A trainable leaf tensor that knows how to initialize itself.

    ``init`` is one of ``"uniform"`` (U(+-sqrt(1/fan_in))), ``"he"``
    (N(0, 2/fan_in), for ReLU stacks), ``"zeros"``, ``"ones"`` or ``"normal"``
    (N(0, std^2)).
    """

    __slots__ = ("init", "fan_in", "std")

    def __init__(self, shape, init="uniform", fan_in=None, std=0.02):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init
        self.fan_in = fan_in
        self.std = std

    def reset(self, rng):
        if self.init == "uniform":
            bound = math.sqrt(1.0 / self.fan_in)
            self.data = rng.uniform(-bound, bound, size=self.shape)
        elif self.init == "he":
            self.data = rng.normal(0.0, math.sqrt(2.0 / self.fan_in), size=self.shape)
        elif self.init == "normal":
            self.data = rng.normal(0.0, self.std, size=self.shape)
        elif self.init == "ones":
            self.data = np.ones(self.shape)
        else:
            self.data = np.zeros(self.shape)


class Module:
    """Attribute-tree of parameters and submodules with stable dotted names."""

    def named_parameters(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def initialize(self, seed):
        """Fill every parameter from its own stream keyed by (seed, name)."""
        for name, p in self.named_parameters().items():
            p.reset(stream(seed, "init", name))
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            if name in state:
                value = np.asarray(state[name], dtype=np.float64)
                if value.shape != p.shape:
                    raise E.ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
                p.data = value.copy()

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, bias=True):
        self.weight = Parameter((d_in, d_out), fan_in=d_in)
        self.bias = Parameter((d_out,), init="zeros") if bias else None

    def __call__(self, x):
        y = E.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-10):
        self.weight = Parameter((d,), init="ones")
        self.bias = Parameter((d,), init="zeros")
        self.eps = eps

    def __call__(self, x):
        return E.layer_norm(x, self.weight, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n, d):
        self.table = Parameter((n, d), init="normal", std=1.0)

    def __call__(self, ids):
        return E.getitem(self.table, np.asarray(ids, dtype=np.int64))


class MultiHeadAttention(Module):
    def __init__(self, d, n_heads):
        if d % n_heads:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(d, d)
        self.k = Linear(d, d, bias=False)   # a key bias shifts every score equally: no gradient
        self.v = Linear(d, d)
        self.out = Linear(d, d)

    def __call__(self, x):
        b, n, d = x.shape
        h = self.n_heads
        dh = d // h
        q = self.q(x).reshape(b, n, h, dh).transpose(0, 2, 1, 3)   # B,H,N,dh
        k = self.k(x).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
        v = self.v(x).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
        att = E.softmax(E.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)), axis=-1)
        y = E.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(y)


class TransformerLayer(Module):
    """Pre-norm self-attention block followed by a ReLU feed-forward block."""

    def __init__(self, d, n_heads, ff_mult=2):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ff_mult * d)
        self.ff2 = Linear(ff_mult * d, d)

    def __call__(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff2(E.relu(self.ff1(self.norm2(x))))


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, padding=0):
        self.weight = Parameter((c_out, c_in, k, k), init="he", fan_in=c_in * k * k)
        self.bias = Parameter((c_out,), init="zeros")
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return E.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, padding=0):
        # each output pixel sees about c_in * (k / stride)^2 taps
        self.weight = Parameter((c_in, c_out, k, k), init="he", fan_in=max(1, c_in * k * k // (stride * stride)))
        self.bias = Parameter((c_out,), init="zeros")
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return E.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


def sinusoidal_embedding(positions, d):
    """Standard sin/cos table for integer (or real) positions, shape (len, d)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = positions * freqs
    table = np.zeros((positions.shape[0], d))
    table[:, 0:2 * half:2] = np.sin(angles)
    table[:, 1:2 * half:2] = np.cos(angles)
    return table
