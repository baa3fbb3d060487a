"""Central finite-difference verification of backward rules.

check_gradients runs `fn` under a fresh tape, projects its output onto a
fixed random direction (so every output element influences the scalar),
backpropagates, then perturbs each input element by +/- eps and compares.
Always run this in 64-bit: the default eps of 1e-5 drowns in float32 noise.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .engine import Tape, Tensor


def check_gradients(fn, inputs, rng: np.random.Generator | None = None,
                    eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    fn maps the Tensor inputs to a single Tensor (any shape).  The relative
    error of one element is |ad - fd| / max(1, |ad|, |fd|); the returned
    value is the max over all elements of all inputs.
    """
    inputs = list(inputs)
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.grad = None

    probe = fn(*inputs)
    weights = rng.standard_normal(probe.shape)

    def scalar(*args):
        out = fn(*args)
        return ops.sum_all(ops.mul(out, Tensor(weights, dtype=np.float64)))

    with Tape() as tape:
        loss = scalar(*inputs)
    tape.backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(scalar(*inputs).data)
            flat[i] = orig - eps
            lo = float(scalar(*inputs).data)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            a = float(ad.reshape(-1)[i])
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            if err > worst:
                worst = err
    return worst
