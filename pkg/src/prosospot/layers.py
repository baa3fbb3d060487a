"""Reusable differentiable layers built on the tensor core.

Layers are small classes holding parameter tensors as attributes.  The
``Module`` base collects parameters recursively under dotted path names,
which is also the naming scheme used by checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensorcore as tc
from .tensorcore import ShapeError, Tensor


class Module:
    """Base for parameterized layers; collects tensors by dotted path."""

    def parameters(self) -> dict:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[name] = val
            elif isinstance(val, Module):
                for k, v in val.parameters().items():
                    out[f"{name}.{k}"] = v
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        for k, v in item.parameters().items():
                            out[f"{name}.{i}.{k}"] = v
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, dtype=None):
        self.w = tc.xavier_uniform(rng, (d_in, d_out), dtype=dtype)
        self.b = tc.zeros_param((d_out,), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return tc.add(tc.matmul(x, self.w), self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=None):
        self.gain = tc.ones_param((dim,), dtype=dtype)
        self.bias = tc.zeros_param((dim,), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return tc.layernorm(x, self.gain, self.bias)


class FeedForward(Module):
    """Two-layer position-wise network with swish in between."""

    def __init__(self, rng, dim: int, expansion: int = 2, dtype=None):
        self.lin1 = Linear(rng, dim, dim * expansion, dtype=dtype)
        self.lin2 = Linear(rng, dim * expansion, dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(tc.swish(self.lin1(x)))


def glu(x: Tensor) -> Tensor:
    """Halve the last axis: first half gated by sigmoid of the second."""
    d = x.shape[-1]
    if d % 2:
        raise ShapeError(f"glu needs an even last axis, got {d}")
    a = tc.slice_axis(x, -1, 0, d // 2)
    b = tc.slice_axis(x, -1, d // 2, d)
    return tc.mul(a, tc.sigmoid(b))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over [B, T, D] streams.

    Query comes from ``q_in``; keys and values from ``kv_in``.  With
    ``residual_ln`` the module adds the query stream back and layer-norms,
    otherwise it returns the raw projected context.
    """

    def __init__(self, rng, dim: int, n_heads: int, residual_ln: bool = True,
                 dtype=None):
        if dim % n_heads:
            raise ShapeError(f"dim {dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.wq = Linear(rng, dim, dim, dtype=dtype)
        self.wk = Linear(rng, dim, dim, dtype=dtype)
        self.wv = Linear(rng, dim, dim, dtype=dtype)
        self.wo = Linear(rng, dim, dim, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype) if residual_ln else None

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.n_heads
        return tc.swapaxes(tc.reshape(x, (b, t, h, d // h)), 1, 2)

    def __call__(self, q_in: Tensor, kv_in: Tensor,
                 return_weights: bool = False):
        if q_in.shape[-1] != kv_in.shape[-1]:
            raise ShapeError(
                f"attention width mismatch: {q_in.shape} vs {kv_in.shape}")
        b, tq, d = q_in.shape
        dh = d // self.n_heads
        qh = self._split(self.wq(q_in))
        kh = self._split(self.wk(kv_in))
        vh = self._split(self.wv(kv_in))
        scores = tc.mul(tc.matmul(qh, tc.swapaxes(kh, 2, 3)),
                        1.0 / math.sqrt(dh))
        weights = tc.softmax_lastdim(scores)
        ctx = tc.reshape(tc.swapaxes(tc.matmul(weights, vh), 1, 2),
                         (b, tq, d))
        out = self.wo(ctx)
        if self.norm is not None:
            out = self.norm(tc.add(out, q_in))
        if return_weights:
            return out, weights
        return out


class PositionalEmbedding(Module):
    """Learned absolute position table added to the input."""

    def __init__(self, rng, max_len: int, dim: int, dtype=None):
        self.max_len = max_len
        self.table = tc.xavier_uniform(rng, (max_len, dim), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[1]
        if t > self.max_len:
            raise ShapeError(
                f"sequence length {t} exceeds position table {self.max_len}")
        return tc.add(x, tc.slice_axis(self.table, 0, 0, t))


class Conv1d(Module):
    def __init__(self, rng, d_in: int, d_out: int, kernel: int,
                 stride: int = 1, padding: int = 0, dtype=None):
        self.stride = stride
        self.padding = padding
        self.kernel = tc.xavier_uniform(rng, (kernel, d_in, d_out),
                                        fan_in=kernel * d_in,
                                        fan_out=kernel * d_out, dtype=dtype)
        self.bias = tc.zeros_param((d_out,), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = tc.conv1d(x, self.kernel, stride=self.stride,
                      padding=self.padding)
        return tc.add(y, self.bias)


class DepthwiseConv1d(Module):
    def __init__(self, rng, channels: int, kernel: int, padding: int = 0,
                 dtype=None):
        self.padding = padding
        self.kernel = tc.xavier_uniform(rng, (kernel, channels),
                                        fan_in=kernel, fan_out=kernel,
                                        dtype=dtype)
        self.bias = tc.zeros_param((channels,), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = tc.depthwise_conv1d(x, self.kernel, padding=self.padding)
        return tc.add(y, self.bias)


class GRUCell(Module):
    """Single recurrent cell; weights uniform in ±1/sqrt(hidden)."""

    def __init__(self, rng, d_in: int, hidden: int, dtype=None):
        self.hidden = hidden
        self.wx = tc.recurrent_uniform(rng, (d_in, 3 * hidden), hidden,
                                       dtype=dtype)
        self.wh = tc.recurrent_uniform(rng, (hidden, 3 * hidden), hidden,
                                       dtype=dtype)
        self.bx = tc.zeros_param((3 * hidden,), dtype=dtype)
        self.bh = tc.zeros_param((3 * hidden,), dtype=dtype)

    def __call__(self, x_t: Tensor, h: Tensor) -> Tensor:
        return tc.gru_cell(x_t, h, self.wx, self.wh, self.bx, self.bh)

    def initial_state(self, batch: int, dtype=None) -> Tensor:
        dtype = dtype or self.wx.dtype
        return Tensor(np.zeros((batch, self.hidden), dtype=dtype))


def run_gru(cell: GRUCell, steps, h0: Tensor | None = None) -> list:
    """Run a cell over a list of per-step [B, d_in] tensors.

    Returns the list of hidden states, one per step.
    """
    if not steps:
        raise ShapeError("run_gru needs at least one step")
    h = h0 if h0 is not None else cell.initial_state(steps[0].shape[0],
                                                     steps[0].dtype)
    outs = []
    for x_t in steps:
        h = cell(x_t, h)
        outs.append(h)
    return outs


def stack_time(states) -> Tensor:
    """Join per-step [B, H] states into one [B, T, H] tensor."""
    b, h = states[0].shape
    return tc.concat([tc.reshape(s, (b, 1, h)) for s in states], axis=1)
