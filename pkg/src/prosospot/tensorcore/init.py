"""Parameter initialization.

Linear and convolution weights draw from uniform(-a, a) with
a = sqrt(6 / (fan_in + fan_out)); biases start at zero; recurrent weight
matrices use plain scaled uniform(-1/sqrt(hidden), 1/sqrt(hidden)).
All draws come from an explicitly passed numpy Generator so that a model
built twice from the same seed is bitwise identical.
"""

from __future__ import annotations

import numpy as np

from .engine import DEFAULT_DTYPE, Tensor


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int | None = None,
                   fan_out: int | None = None, dtype=None) -> Tensor:
    """Fan counts default to the trailing two extents ([in, out] layout)."""
    shape = tuple(shape)
    if fan_in is None or fan_out is None:
        if len(shape) < 2:
            raise ValueError(f"cannot infer fans from shape {shape}")
        fan_in = fan_in if fan_in is not None else int(np.prod(shape[:-1]))
        fan_out = fan_out if fan_out is not None else shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape)
    return Tensor(data.astype(dtype or DEFAULT_DTYPE), requires_grad=True)


def recurrent_uniform(rng: np.random.Generator, shape, hidden: int,
                      dtype=None) -> Tensor:
    limit = 1.0 / np.sqrt(hidden)
    data = rng.uniform(-limit, limit, size=tuple(shape))
    return Tensor(data.astype(dtype or DEFAULT_DTYPE), requires_grad=True)


def zeros_param(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=dtype or DEFAULT_DTYPE),
                  requires_grad=True)


def ones_param(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(tuple(shape), dtype=dtype or DEFAULT_DTYPE),
                  requires_grad=True)
