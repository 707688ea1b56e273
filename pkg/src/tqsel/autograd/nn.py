"""Parameter containers and the layers the localization models are built from."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable tensor carrying Adam first/second moment state."""

    __slots__ = ("m", "v")

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class Module:
    """Base class; parameters are discovered from attributes, recursively."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, bound, shape, dtype):
    return Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=None):
        dtype = dtype or get_default_dtype()
        bound = np.sqrt(6.0 / (d_in + d_out))
        self.weight = _uniform(rng, bound, (d_in, d_out), dtype)
        self.bias = Parameter(np.zeros(d_out), dtype=dtype) if bias else None

    def pair(self):
        return self.weight, self.bias

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=None):
        dtype = dtype or get_default_dtype()
        self.gamma = Parameter(np.ones(dim), dtype=dtype)
        self.beta = Parameter(np.zeros(dim), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=None):
        dtype = dtype or get_default_dtype()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        bound = np.sqrt(6.0 / (c_in * kh * kw))  # He-uniform for ReLU stacks
        self.weight = _uniform(rng, bound, (c_out, c_in, kh, kw), dtype)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor, stride=None) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride if stride is None else stride, self.padding)


class MultiHeadAttention(Module):
    """Attention with separate query and key/value input widths."""

    def __init__(self, d_model: int, heads: int, rng, kv_dim: int | None = None, dtype=None):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        kv_dim = kv_dim or d_model
        self.heads = heads
        self.q = Linear(d_model, d_model, rng, dtype=dtype)
        self.k = Linear(kv_dim, d_model, rng, dtype=dtype)
        self.v = Linear(kv_dim, d_model, rng, dtype=dtype)
        self.o = Linear(d_model, d_model, rng, dtype=dtype)

    def forward(self, q_seq: Tensor, kv_seq: Tensor, mask=None) -> Tensor:
        return ops.multi_head_cross_attention(
            q_seq, kv_seq, self.heads, self.q.pair(), self.k.pair(), self.v.pair(), self.o.pair(), mask
        )


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng, dtype=None):
        self.up = Linear(d_model, d_ff, rng, dtype=dtype)
        self.down = Linear(d_ff, d_model, rng, dtype=dtype)

    def forward(self, x):
        return self.down(ops.relu(self.up(x)))


class EncoderBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d_model, heads, d_ff, rng, dtype=None):
        self.norm1 = LayerNorm(d_model, dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype)
        self.ff = FeedForward(d_model, d_ff, rng, dtype)

    def forward(self, x, mask=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.norm2(x))


class DecoderBlock(Module):
    """Pre-norm self-attention, cross-attention to ``memory``, feed-forward."""

    def __init__(self, d_model, heads, d_ff, rng, memory_dim=None, dtype=None):
        self.norm1 = LayerNorm(d_model, dtype)
        self.self_attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, kv_dim=memory_dim, dtype=dtype)
        self.norm3 = LayerNorm(d_model, dtype)
        self.ff = FeedForward(d_model, d_ff, rng, dtype)

    def forward(self, x, memory, mask=None):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, mask)
        x = x + self.cross_attn(self.norm2(x), memory)
        return x + self.ff(self.norm3(x))
