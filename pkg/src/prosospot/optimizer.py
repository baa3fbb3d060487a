"""AdamW with decoupled weight decay and a warmup-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor


@dataclass(frozen=True)
class ScheduleConfig:
    steps_per_epoch: int
    total_epochs: int = 40
    warmup_epochs: int = 5
    peak_lr: float = 3e-4
    floor_lr: float = 0.0

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError(
                f"warmup ({self.warmup_epochs}) must fall inside the run "
                f"({self.total_epochs} epochs)")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Linear ramp to peak over the warmup span, then a half cosine down."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.floor_lr + 0.5 * (cfg.peak_lr - cfg.floor_lr) \
        * (1.0 + math.cos(math.pi * progress))


def global_grad_norm(params: dict) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients down to a shared max norm; returns the raw norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return norm


def grads_finite(params: dict) -> bool:
    return all(p.grad is None or bool(np.all(np.isfinite(p.grad)))
               for p in params.values())


class AdamW:
    """Bias-corrected Adam update plus a decay term applied to the raw
    parameter, outside the moment estimates.
    """

    def __init__(self, params: dict, lr: float = 3e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-3):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float | None = None) -> bool:
        """Apply one update; a non-finite gradient rejects the whole step."""
        if not grads_finite(self.params):
            return False
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= np.asarray(lr, dtype=p.data.dtype) * update.astype(
                p.data.dtype, copy=False)
        return True

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_tensors(self) -> dict:
        """Moment buffers and step counter as checkpointable tensors."""
        out = {"opt.step": Tensor(np.array(float(self.step_count),
                                           dtype=np.float64))}
        for name in self.params:
            out[f"opt.m.{name}"] = Tensor(self.m[name])
            out[f"opt.v.{name}"] = Tensor(self.v[name])
        return out

    def load_state(self, arrays: dict) -> None:
        self.step_count = int(arrays["opt.step"])
        for name in self.params:
            for prefix, buf in (("opt.m.", self.m), ("opt.v.", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise KeyError(f"optimizer state missing {key}")
                if arrays[key].shape != buf[name].shape:
                    raise ValueError(
                        f"optimizer state {key} has shape "
                        f"{arrays[key].shape}, expected {buf[name].shape}")
                buf[name] = arrays[key].astype(buf[name].dtype, copy=True)
