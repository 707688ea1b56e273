"""Differentiable operations.

Shapes must match exactly; the only implicit broadcast is adding a 1-D bias
along the last axis (and Python scalars).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Tensor, as_tensor, make_result


class ShapeMismatch(ValueError):
    pass


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_bias(g, shape):
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return make_result(a.data + b, (a,), lambda g: (g,))
    if a.shape == b.shape:
        return make_result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return make_result(a.data + b.data, (a, b), lambda g: (g, _reduce_bias(g, b.shape)))
    raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} are incompatible")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    _check_same("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return make_result(a.data * b, (a,), lambda g: (g * b,))
    _check_same("mul", a, b)
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def mul_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting; gradients are summed back to each shape."""
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul_broadcast: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., n, k) @ (k, m), or batched (..., n, k) @ (..., k, m) with equal batch dims."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    if b.ndim == 2:
        k, m = b.shape

        def backward(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            return ga, gb

        return make_result(a.data @ b.data, (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims {a.shape[:-2]} and {b.shape[:-2]} differ")

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W + b with W of shape (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(np.asarray(a.data[index]), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeMismatch(f"concat: shapes {ref.shape} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def abs(a: Tensor) -> Tensor:  # noqa: A001
    # np.sign gives the subgradient 0 at ties
    s = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * s,))


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; ``mask`` (broadcastable bool) marks positions forced to 0."""
    x = a.data
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result(p, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gg = g.reshape(-1, d)
        gbeta = gg.sum(axis=0)
        ggamma = (gg * xhat.reshape(-1, d)).sum(axis=0)
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation. x: (N, C, H, W); weight: (O, C, kh, kw); bias: (O,)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} and weight {weight.shape} are incompatible")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch(f"conv2d: kernel {weight.shape[2:]} larger than padded input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]  # (N, C, ho, wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, ph : ph + h, pw : pw + w]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_result(np.ascontiguousarray(out), parents, backward)


def global_mean_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeMismatch(f"global_mean_pool expects (N, C, H, W), got {x.shape}")
    return mean(x, axis=(2, 3))


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes; ``mask`` True = blocked."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1, mask=mask), v)


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, d = x.shape
    return transpose(reshape(x, (n, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    n, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (n, t, h * dh))


def multi_head_cross_attention(q_seq, kv_seq, heads, wq, wk, wv, wo, mask=None) -> Tensor:
    """Multi-head attention of ``q_seq`` (N, Tq, Dq) over ``kv_seq`` (N, Tk, Dk).

    ``wq``..``wo`` are (weight, bias) pairs of the four projections.
    """
    q = split_heads(linear(q_seq, *wq), heads)
    k = split_heads(linear(kv_seq, *wk), heads)
    v = split_heads(linear(kv_seq, *wv), heads)
    return linear(merge_heads(scaled_dot_product_attention(q, k, v, mask)), *wo)


def constant(x, like: Tensor | None = None) -> Tensor:
    return as_tensor(np.asarray(x), like)
