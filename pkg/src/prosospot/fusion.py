"""Collaborative fusion: prosody-conditioned modulation, text
cross-attention, prosody matching, and the recurrent decision head.
"""

from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .layers import GRUCell, Linear, Module, MultiHeadAttention
from .tensorcore import ShapeError, Tensor

D_PHONEME = 128
D_PROSODY = 64
COSINE_EPS = 1e-8
NORM_EPS = 1e-12


class FilmModule(Module):
    """Feature-wise affine modulation driven by the prosodic signature.

    gamma's bias starts at one so the initial modulation is near identity.
    """

    def __init__(self, rng, d_pro: int = D_PROSODY, d_p: int = D_PHONEME,
                 dtype=None):
        self.gamma = Linear(rng, d_pro, d_p, dtype=dtype)
        self.beta = Linear(rng, d_pro, d_p, dtype=dtype)
        self.gamma.b = tc.ones_param((d_p,), dtype=dtype)

    def __call__(self, z: Tensor, v_pro: Tensor) -> Tensor:
        if z.shape[-1] != self.gamma.w.shape[-1]:
            raise ShapeError(
                f"modulation width mismatch: features {z.shape}, "
                f"maps produce {self.gamma.w.shape[-1]}")
        gamma = self.gamma(v_pro)
        beta = self.beta(v_pro)
        return tc.add(tc.mul(z, gamma), beta)


class CrossAttention(Module):
    """Phoneme features attend over text embeddings (keys and values)."""

    def __init__(self, rng, dim: int = D_PHONEME, n_heads: int = 4,
                 residual_ln: bool = True, dtype=None):
        self.attn = MultiHeadAttention(rng, dim, n_heads,
                                       residual_ln=residual_ln, dtype=dtype)

    def __call__(self, z_q: Tensor, z_text: Tensor,
                 return_weights: bool = False):
        return self.attn(z_q, z_text, return_weights=return_weights)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine over [B, D]; an all-zero row scores exactly 0."""
    dot = tc.sum_over_axis(tc.mul(a, b), axis=1)
    na = tc.sqrt(tc.add(tc.sum_over_axis(tc.mul(a, a), axis=1), NORM_EPS))
    nb = tc.sqrt(tc.add(tc.sum_over_axis(tc.mul(b, b), axis=1), NORM_EPS))
    return tc.div(dot, tc.clamp(tc.mul(na, nb), lo=COSINE_EPS))


def prosody_match(v_pro_q: Tensor, v_pro: Tensor) -> Tensor:
    if v_pro_q.shape != v_pro.shape or v_pro_q.ndim != 2:
        raise ShapeError(
            f"prosody match expects matching [B, D], got {v_pro_q.shape} "
            f"and {v_pro.shape}")
    return cosine_similarity(v_pro_q, v_pro)


class DecisionHead(Module):
    """Frame-wise concat -> unidirectional GRU -> FC -> sigmoid score."""

    def __init__(self, rng, d_p: int = D_PHONEME, d_pro: int = D_PROSODY,
                 hidden: int = 64, dtype=None):
        self.d_p = d_p
        self.d_pro = d_pro
        self.cell = GRUCell(rng, d_p + d_pro + 1, hidden, dtype=dtype)
        self.fc = Linear(rng, hidden, 1, dtype=dtype)

    def __call__(self, z_at: Tensor, v_pro: Tensor, s_pro: Tensor,
                 return_summary: bool = False):
        b, t, d = z_at.shape
        if d != self.d_p or v_pro.shape != (b, self.d_pro) \
                or s_pro.shape != (b,):
            raise ShapeError(
                f"decision head got z_at {z_at.shape}, v_pro {v_pro.shape}, "
                f"s_pro {s_pro.shape}")
        s_col = tc.reshape(s_pro, (b, 1))
        h = self.cell.initial_state(b, z_at.dtype)
        for step in range(t):
            frame = tc.reshape(tc.slice_axis(z_at, 1, step, step + 1),
                               (b, d))
            h = self.cell(tc.concat([frame, v_pro, s_col], axis=1), h)
        score = tc.reshape(tc.sigmoid(self.fc(h)), (b,))
        if return_summary:
            return score, h
        return score


def interpolate_signature(v_pos: Tensor, v_neg: Tensor, alpha: float) -> Tensor:
    """(1 - alpha) * v_pos + alpha * v_neg, alpha restricted to [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if v_pos.shape != v_neg.shape:
        raise ShapeError(
            f"endpoint shapes differ: {v_pos.shape} vs {v_neg.shape}")
    if alpha == 0.0:
        return v_pos
    if alpha == 1.0:
        return v_neg
    return tc.add(tc.mul(v_pos, 1.0 - alpha), tc.mul(v_neg, alpha))
