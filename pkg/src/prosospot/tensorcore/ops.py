"""Differentiable operations.

Every function here runs as plain numpy when no tape is active, and records
a backward rule on the innermost tape when one is.  Binary elementwise ops
broadcast under three rules, checked in order:

  1. equal ranks: numpy broadcasting (extents equal or 1);
  2. rank r against rank r+1 where the smaller shape equals the larger with
     axis 1 removed: a per-batch operand [B, D] spreads across the middle
     axis of [B, T, D];
  3. otherwise the smaller shape must right-align against the larger one
     (a bias [D] spreads over [B, T, D]).

Gradients of broadcast operands are summed back over the spread axes.
"""

from __future__ import annotations

import numpy as np

from .engine import ShapeError, Tensor, record_op


def _contig(a) -> np.ndarray:
    """Row-major copy when needed; leaves 0-d arrays 0-d (unlike
    np.ascontiguousarray on this numpy, which promotes them to shape (1,)).
    """
    a = np.asarray(a)
    if a.ndim and not a.flags["C_CONTIGUOUS"]:
        return np.ascontiguousarray(a)
    return a


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_dtypes(a: Tensor, b: Tensor, name: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(
            f"{name}: dtype mismatch {a.data.dtype.name} vs {b.data.dtype.name}")


def _expanded_shapes(sa: tuple, sb: tuple):
    """Singleton-padded shapes implementing the module broadcast rules."""
    if sa == sb:
        return sa, sb
    if len(sa) == len(sb):
        if all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb)):
            return sa, sb
        raise ShapeError(f"cannot broadcast {sa} against {sb}")
    small, big, flipped = (sa, sb, False) if len(sa) < len(sb) else (sb, sa, True)
    if len(big) - len(small) == 1 and len(small) >= 1 \
            and small[:1] == big[:1] and small[1:] == big[2:]:
        exp = small[:1] + (1,) + small[1:]
    elif all(x == y or x == 1 for x, y in zip(small, big[len(big) - len(small):])):
        exp = (1,) * (len(big) - len(small)) + small
    else:
        raise ShapeError(f"cannot broadcast {sa} against {sb}")
    return (exp, big) if not flipped else (big, exp)


def _reduce_grad(grad: np.ndarray, expanded: tuple, original: tuple) -> np.ndarray:
    axes = tuple(i for i, e in enumerate(expanded) if e == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return _contig(grad.reshape(original))


def _binary(a, b, name, fwd, bwd):
    """bwd(gout, a_exp, b_exp) returns both grads broadcast to gout's shape."""
    if isinstance(a, Tensor):
        b = _wrap(b, a)
    elif isinstance(b, Tensor):
        a = _wrap(a, b)
    else:
        raise ShapeError(f"{name} needs at least one tensor operand")
    _check_dtypes(a, b, name)
    ea, eb = _expanded_shapes(a.shape, b.shape)
    da = a.data.reshape(ea)
    db = b.data.reshape(eb)
    out = Tensor(fwd(da, db))

    def backward(gout):
        ga, gb = bwd(gout, da, db)
        ga = None if ga is None else _reduce_grad(np.broadcast_to(ga, gout.shape) if ga.shape != gout.shape else ga, ea, a.shape)
        gb = None if gb is None else _reduce_grad(np.broadcast_to(gb, gout.shape) if gb.shape != gout.shape else gb, eb, b.shape)
        return ga, gb

    return record_op(out, (a, b), backward, name)


def add(a, b):
    return _binary(a, b, "add",
                   lambda x, y: x + y,
                   lambda g, x, y: (g, g))


def sub(a, b):
    return _binary(a, b, "sub",
                   lambda x, y: x - y,
                   lambda g, x, y: (g, -g))


def mul(a, b):
    return _binary(a, b, "mul",
                   lambda x, y: x * y,
                   lambda g, x, y: (g * y, g * x))


def div(a, b):
    return _binary(a, b, "div",
                   lambda x, y: x / y,
                   lambda g, x, y: (g / y, -g * x / (y * y)))


def _unary(x: Tensor, name, fwd, bwd):
    out = Tensor(fwd(x.data))

    def backward(gout):
        return (bwd(gout, x.data, out.data),)

    return record_op(out, (x,), backward, name)


def neg(x: Tensor) -> Tensor:
    return _unary(x, "neg", lambda v: -v, lambda g, v, o: -g)


def exp(x: Tensor) -> Tensor:
    return _unary(x, "exp", np.exp, lambda g, v, o: g * o)


def log(x: Tensor) -> Tensor:
    return _unary(x, "log", np.log, lambda g, v, o: g / v)


def sqrt(x: Tensor) -> Tensor:
    return _unary(x, "sqrt", np.sqrt, lambda g, v, o: g * (0.5 / o))


def tanh(x: Tensor) -> Tensor:
    return _unary(x, "tanh", np.tanh, lambda g, v, o: g * (1.0 - o * o))


def sigmoid(x: Tensor) -> Tensor:
    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary(x, "sigmoid", fwd, lambda g, v, o: g * o * (1.0 - o))


def relu(x: Tensor) -> Tensor:
    return _unary(x, "relu", lambda v: np.maximum(v, 0.0),
                  lambda g, v, o: g * (v > 0))


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x), the conformer activation."""
    return mul(x, sigmoid(x))


def clamp(x: Tensor, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside the closed interval."""
    if lo is None and hi is None:
        raise ValueError("clamp needs at least one bound")

    def fwd(v):
        return np.clip(v, lo, hi)

    def bwd(g, v, o):
        mask = np.ones_like(v, dtype=bool)
        if lo is not None:
            mask &= v >= lo
        if hi is not None:
            mask &= v <= hi
        return g * mask

    return _unary(x, "clamp", fwd, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product on trailing [m, k] x [k, n] axes.

    Leading batch extents must match, or the lower-rank side is an unbatched
    matrix shared across the other side's batch.
    """
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise ShapeError("matmul expects tensors")
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim == b.ndim:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    elif min(a.ndim, b.ndim) != 2:
        raise ShapeError(f"matmul rank mismatch: {a.shape} @ {b.shape}")

    out = Tensor(np.matmul(a.data, b.data))

    def backward(gout):
        if a.ndim == b.ndim:
            ga = np.matmul(gout, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), gout)
        elif b.ndim == 2:
            ga = np.matmul(gout, b.data.T)
            flat_a = a.data.reshape(-1, a.shape[-1])
            flat_g = gout.reshape(-1, gout.shape[-1])
            gb = flat_a.T @ flat_g
        else:  # a.ndim == 2, b batched
            flat_b = np.swapaxes(b.data, -1, -2).reshape(-1, b.shape[-2])
            flat_g = np.swapaxes(gout, -1, -2).reshape(-1, gout.shape[-2])
            ga = flat_g.T @ flat_b
            gb = np.matmul(np.swapaxes(np.broadcast_to(
                a.data, b.shape[:-2] + a.shape), -1, -2), gout)
        return _contig(ga), _contig(gb)

    return record_op(out, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def backward(gout):
        s = out.data
        return ((gout - (gout * s).sum(axis=-1, keepdims=True)) * s,)

    return record_op(out, (x,), backward, "softmax_lastdim")


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    A constant (zero-variance) slice normalizes to zeros rather than blowing
    up: the epsilon sits inside the square root.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layernorm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(gout):
        dxhat = gout * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(gout.ndim - 1))
        ggain = (gout * xhat).sum(axis=axes)
        gbias = gout.sum(axis=axes)
        return gx, ggain, gbias

    return record_op(out, (x, gain, bias), backward, "layernorm")


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along time: [B, L, Cin] * [K, Cin, Cout].

    Output length is floor((L + 2*padding - K) / stride) + 1.
    """
    _check_dtypes(x, kernel, "conv1d")
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects [B,L,Cin] and [K,Cin,Cout], got "
                         f"{x.shape} and {kernel.shape}")
    b, length, cin = x.shape
    k, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv1d channel mismatch: input {cin}, kernel {kcin}")
    lout = (length + 2 * padding - k) // stride + 1
    if lout < 1:
        raise ShapeError(
            f"conv1d input too short: length {length} with kernel {k}, "
            f"stride {stride}, padding {padding}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (0, 0)))
    out_data = np.zeros((b, lout, cout), dtype=x.data.dtype)
    hi = stride * (lout - 1) + 1
    for i in range(k):
        out_data += np.matmul(xp[:, i:i + hi:stride, :], kernel.data[i])
    out = Tensor(out_data)

    def backward(gout):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for i in range(k):
            sl = slice(i, i + hi, stride)
            gxp[:, sl, :] += np.matmul(gout, kernel.data[i].T)
            gk[i] = np.tensordot(xp[:, sl, :], gout, axes=([0, 1], [0, 1]))
        gx = gxp[:, padding:padding + length, :] if padding else gxp
        return _contig(gx), gk

    return record_op(out, (x, kernel), backward, "conv1d")


def depthwise_conv1d(x: Tensor, kernel: Tensor, padding: int = 0) -> Tensor:
    """Per-channel convolution along time: [B, L, C] * [K, C], stride 1."""
    _check_dtypes(x, kernel, "depthwise_conv1d")
    if x.ndim != 3 or kernel.ndim != 2:
        raise ShapeError(f"depthwise_conv1d expects [B,L,C] and [K,C], got "
                         f"{x.shape} and {kernel.shape}")
    b, length, c = x.shape
    k, kc = kernel.shape
    if kc != c:
        raise ShapeError(f"depthwise channel mismatch: input {c}, kernel {kc}")
    lout = length + 2 * padding - k + 1
    if lout < 1:
        raise ShapeError(f"depthwise_conv1d input too short: length {length}, "
                         f"kernel {k}, padding {padding}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (0, 0)))
    out_data = np.zeros((b, lout, c), dtype=x.data.dtype)
    for i in range(k):
        out_data += xp[:, i:i + lout, :] * kernel.data[i]
    out = Tensor(out_data)

    def backward(gout):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for i in range(k):
            gxp[:, i:i + lout, :] += gout * kernel.data[i]
            gk[i] = (xp[:, i:i + lout, :] * gout).sum(axis=(0, 1))
        gx = gxp[:, padding:padding + length, :] if padding else gxp
        return _contig(gx), gk

    return record_op(out, (x, kernel), backward, "depthwise_conv1d")


def gru_cell(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor,
             bx: Tensor, bh: Tensor) -> Tensor:
    """One gated recurrent step with reset/update/candidate gating.

    Gate blocks are stacked [reset | update | candidate] along the last axis
    of the weights.  With all-zero parameters and zero state the update gate
    is 1/2 and the candidate is 0, so the state stays exactly zero.
    """
    for t in (h, wx, wh, bx, bh):
        _check_dtypes(x, t, "gru_cell")
    bsz, din = x.shape
    hsz = h.shape[-1]
    if h.shape != (bsz, hsz) or wx.shape != (din, 3 * hsz) \
            or wh.shape != (hsz, 3 * hsz) or bx.shape != (3 * hsz,) \
            or bh.shape != (3 * hsz,):
        raise ShapeError(
            f"gru_cell shapes inconsistent: x{x.shape} h{h.shape} wx{wx.shape} "
            f"wh{wh.shape} bx{bx.shape} bh{bh.shape}")
    gi = x.data @ wx.data + bx.data
    gh = h.data @ wh.data + bh.data
    i_r, i_z, i_n = gi[:, :hsz], gi[:, hsz:2 * hsz], gi[:, 2 * hsz:]
    h_r, h_z, h_n = gh[:, :hsz], gh[:, hsz:2 * hsz], gh[:, 2 * hsz:]

    def _sig(v):
        return np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                        np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    r = _sig(i_r + h_r)
    z = _sig(i_z + h_z)
    n = np.tanh(i_n + r * h_n)
    out = Tensor((1.0 - z) * n + z * h.data)

    def backward(gout):
        dz = gout * (h.data - n) * z * (1.0 - z)
        dn = gout * (1.0 - z) * (1.0 - n * n)
        dr = dn * h_n * r * (1.0 - r)
        dgi = np.concatenate([dr, dz, dn], axis=1)
        dgh = np.concatenate([dr, dz, dn * r], axis=1)
        gx = dgi @ wx.data.T
        gh_in = gout * z + dgh @ wh.data.T
        gwx = x.data.T @ dgi
        gwh = h.data.T @ dgh
        gbx = dgi.sum(axis=0)
        gbh = dgh.sum(axis=0)
        return gx, gh_in, gwx, gwh, gbx, gbh

    return record_op(out, (x, h, wx, wh, bx, bh), backward, "gru_cell")


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along one axis; all other extents must match."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    first = tensors[0]
    for t in tensors[1:]:
        _check_dtypes(first, t, "concat")
        if t.ndim != first.ndim:
            raise ShapeError(f"concat rank mismatch: {first.shape} vs {t.shape}")
    ax = axis % first.ndim
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(gout):
        pieces = []
        for i in range(len(tensors)):
            idx = [slice(None)] * gout.ndim
            idx[ax] = slice(offsets[i], offsets[i + 1])
            pieces.append(_contig(gout[tuple(idx)]))
        return tuple(pieces)

    return record_op(out, tuple(tensors), backward, "concat")


def concat_lastdim(tensors) -> Tensor:
    return concat(tensors, axis=-1)


def sum_over_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    ax = axis % x.ndim
    out = Tensor(x.data.sum(axis=ax, keepdims=keepdims))

    def backward(gout):
        g = gout if keepdims else np.expand_dims(gout, ax)
        return (_contig(np.broadcast_to(g, x.shape)),)

    return record_op(out, (x,), backward, "sum_over_axis")


def mean_over_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    ax = axis % x.ndim
    n = x.shape[ax]
    out = Tensor(x.data.mean(axis=ax, keepdims=keepdims))

    def backward(gout):
        g = gout if keepdims else np.expand_dims(gout, ax)
        return (_contig(np.broadcast_to(g / n, x.shape)),)

    return record_op(out, (x,), backward, "mean_over_axis")


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def backward(gout):
        return (np.full_like(x.data, float(gout)),)

    return record_op(out, (x,), backward, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))

    def backward(gout):
        return (np.full_like(x.data, float(gout) / x.data.size),)

    return record_op(out, (x,), backward, "mean_all")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def backward(gout):
        return (_contig(gout.reshape(x.shape)),)

    return record_op(out, (x,), backward, "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = Tensor(_contig(np.swapaxes(x.data, a, b)))

    def backward(gout):
        return (_contig(np.swapaxes(gout, a, b)),)

    return record_op(out, (x,), backward, "swapaxes")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice [{start}, {stop}) out of range for axis "
                         f"{ax} with extent {n}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(_contig(x.data[idx]))

    def backward(gout):
        g = np.zeros_like(x.data)
        g[idx] = gout
        return (g,)

    return record_op(out, (x,), backward, "slice_axis")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of [V, D] by an integer id array; rows get gradients."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be [V, D], got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding id out of range for table of "
                         f"{table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def backward(gout):
        g = np.zeros_like(table.data)
        np.add.at(g, ids, gout)
        return (g,)

    return record_op(out, (table,), backward, "embedding_lookup")
