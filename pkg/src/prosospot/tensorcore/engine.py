"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is deliberately small: a Tensor wraps one contiguous real array,
and a Tape records every differentiable operation in creation order.  Since
creation order is already a topological order, backward() just replays the
records in reverse and accumulates gradients into the inputs.  Each record
is visited exactly once per backward pass; fan-out is handled purely by
accumulation.

Default precision is 32-bit.  Gradient checking and the bit-exactness tests
build their tensors with dtype=np.float64 instead; operations preserve the
dtype of their inputs and refuse to mix the two.
"""

from __future__ import annotations

import itertools

import numpy as np

DEFAULT_DTYPE = np.float32

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_node_ids = itertools.count()

# Stack of currently recording tapes. Ops record onto the innermost one.
_TAPE_STACK: list["Tape"] = []


class ShapeError(ValueError):
    """Operand shapes (or ranks, or dtypes) cannot be combined."""


def _coerce_array(data, dtype):
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
    elif isinstance(data, (np.ndarray, np.generic)) \
            and np.dtype(data.dtype) in _ALLOWED_DTYPES:
        # numpy scalars (e.g. the result of -x on a 0-d array) keep their
        # dtype just like arrays do.
        arr = np.asarray(data)
    else:
        # Lists, python scalars and integer arrays land on the 32-bit default.
        arr = np.asarray(data, dtype=DEFAULT_DTYPE)
    if arr.dtype not in _ALLOWED_DTYPES:
        raise ShapeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A dense real array plus an optional gradient buffer.

    Fields mirror what the backward pass needs and nothing else: `data` is
    row-major, `grad` is lazily allocated by Tape.backward, `node_id` is a
    process-unique integer used for identity and debugging.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _coerce_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """The underlying array (a view; copy before mutating)."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A non-recording leaf sharing this tensor's storage."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t.node_id = next(_node_ids)
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad}, node_id={self.node_id})")

    # Arithmetic sugar; the actual rules live in ops.py.  Imported lazily to
    # avoid a module cycle.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class _Record:
    """One recorded operation: output, inputs, and the local backward rule."""

    __slots__ = ("out", "inputs", "backward_fn", "name")

    def __init__(self, out, inputs, backward_fn, name):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name

    @property
    def out_id(self):
        return self.out.node_id

    @property
    def input_ids(self):
        return tuple(t.node_id for t in self.inputs)


class Tape:
    """Ordered log of operations for one forward evaluation.

    Use as a context manager around the forward pass, then call backward()
    on the scalar result.  Gradients accumulate into `Tensor.grad`; calling
    backward twice without clearing grads accumulates twice.  Forward code
    executed with no tape active runs as plain numpy and records nothing.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _TAPE_STACK.pop()
        assert top is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self._records)

    @property
    def records(self):
        return tuple(self._records)

    def record(self, out: Tensor, inputs, backward_fn, name: str = "") -> None:
        self._records.append(_Record(out, tuple(inputs), backward_fn, name))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and replay all records in reverse."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        else:
            loss.grad = loss.grad + np.ones_like(loss.data)
        for rec in reversed(self._records):
            gout = rec.out.grad
            if gout is None:
                continue
            grads = rec.backward_fn(gout)
            for tensor, grad in zip(rec.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ShapeError(
                        f"backward rule for {rec.name!r} produced shape "
                        f"{grad.shape} for input of shape {tensor.data.shape}")
                if tensor.grad is None:
                    tensor.grad = grad
                else:
                    tensor.grad = tensor.grad + grad


def active_tape():
    """The innermost recording tape, or None outside any tape context."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out: Tensor, inputs, backward_fn, name: str = "") -> Tensor:
    """Mark `out` as produced from `inputs`; record onto the active tape.

    The output requires grad iff some input does and a tape is recording.
    backward_fn(grad_out) must return one gradient array (or None) per input.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn, name)
    return out
