"""Dual-stream encoders: phoneme stream and prosody stream.

The phoneme stream subsamples filterbank frames 4x with two stride-2
convolutions, adds a learned position table, and runs a small stack of
convolution-augmented attention blocks.  The prosody stream is a two-layer
bidirectional GRU over the 3-channel prosody track, summarized either by
attention pooling (enrollment signature) or by a plain time mean (query
side).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .g2p import Alignment
from .layers import (Conv1d, DepthwiseConv1d, FeedForward, GRUCell,
                     LayerNorm, Linear, Module, MultiHeadAttention,
                     PositionalEmbedding, glu, run_gru, stack_time)
from .tensorcore import ShapeError, Tensor

N_FBANK = 80
D_PHONEME = 128
D_PROSODY = 64
MIN_AUDIO_FRAMES = 8


@dataclass(frozen=True)
class PhonemeStreamConfig:
    d_model: int = D_PHONEME
    n_blocks: int = 2
    n_heads: int = 4
    conv_kernel: int = 15
    ff_expansion: int = 2
    max_frames: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly across heads")


@dataclass(frozen=True)
class ProsodyStreamConfig:
    d_in: int = 3
    hidden: int = 32
    layers: int = 2

    @property
    def d_out(self) -> int:
        return 2 * self.hidden


def subsampled_length(frames: int) -> int:
    """Output length after the two stride-2, kernel-3, padding-1 convs."""
    for _ in range(2):
        frames = (frames + 2 - 3) // 2 + 1
    return frames


class ConformerBlock(Module):
    """half-FFN, self-attention, depthwise conv, half-FFN; pre-norm."""

    def __init__(self, rng, cfg: PhonemeStreamConfig, dtype=None):
        d = cfg.d_model
        self.ffn1_norm = LayerNorm(d, dtype=dtype)
        self.ffn1 = FeedForward(rng, d, cfg.ff_expansion, dtype=dtype)
        self.attn_norm = LayerNorm(d, dtype=dtype)
        self.attn = MultiHeadAttention(rng, d, cfg.n_heads,
                                       residual_ln=False, dtype=dtype)
        self.conv_norm = LayerNorm(d, dtype=dtype)
        self.conv_in = Linear(rng, d, 2 * d, dtype=dtype)
        self.conv_dw = DepthwiseConv1d(rng, d, cfg.conv_kernel,
                                       padding=cfg.conv_kernel // 2,
                                       dtype=dtype)
        self.conv_mid_norm = LayerNorm(d, dtype=dtype)
        self.conv_out = Linear(rng, d, d, dtype=dtype)
        self.ffn2_norm = LayerNorm(d, dtype=dtype)
        self.ffn2 = FeedForward(rng, d, cfg.ff_expansion, dtype=dtype)
        self.out_norm = LayerNorm(d, dtype=dtype)

    def _conv_module(self, x: Tensor) -> Tensor:
        y = glu(self.conv_in(self.conv_norm(x)))
        y = tc.swish(self.conv_mid_norm(self.conv_dw(y)))
        return self.conv_out(y)

    def __call__(self, x: Tensor) -> Tensor:
        x = tc.add(x, tc.mul(self.ffn1(self.ffn1_norm(x)), 0.5))
        a = self.attn_norm(x)
        x = tc.add(x, self.attn(a, a))
        x = tc.add(x, self._conv_module(x))
        x = tc.add(x, tc.mul(self.ffn2(self.ffn2_norm(x)), 0.5))
        return self.out_norm(x)


class AudioEncoder(Module):
    """Filterbank frames [B, T, 80] -> acoustic features [B, T/4, 128]."""

    def __init__(self, rng, cfg: PhonemeStreamConfig | None = None,
                 dtype=None):
        cfg = cfg or PhonemeStreamConfig()
        self.cfg = cfg
        self.sub1 = Conv1d(rng, N_FBANK, cfg.d_model, kernel=3, stride=2,
                           padding=1, dtype=dtype)
        self.sub2 = Conv1d(rng, cfg.d_model, cfg.d_model, kernel=3, stride=2,
                           padding=1, dtype=dtype)
        self.pos = PositionalEmbedding(rng, cfg.max_frames, cfg.d_model,
                                       dtype=dtype)
        self.blocks = [ConformerBlock(rng, cfg, dtype=dtype)
                       for _ in range(cfg.n_blocks)]

    def __call__(self, fbank: Tensor) -> Tensor:
        if fbank.ndim != 3 or fbank.shape[-1] != N_FBANK:
            raise ShapeError(
                f"audio encoder expects [B, T, {N_FBANK}], got {fbank.shape}")
        if fbank.shape[1] < MIN_AUDIO_FRAMES:
            raise ShapeError(
                f"audio encoder needs at least {MIN_AUDIO_FRAMES} frames, "
                f"got {fbank.shape[1]}")
        x = tc.relu(self.sub1(fbank))
        x = tc.relu(self.sub2(x))
        x = self.pos(x)
        for block in self.blocks:
            x = block(x)
        return x


def phoneme_pooler(z: Tensor, alignment: Alignment) -> Tensor:
    """Mean of frame features over each aligned phoneme span."""
    alignment.validate(z.shape[1])
    if not alignment.segments:
        raise ValueError("alignment has no segments to pool")
    rows = [tc.mean_over_axis(tc.slice_axis(z, 1, start, end), 1,
                              keepdims=True)
            for start, end in alignment.segments]
    return tc.concat(rows, axis=1)


class ProsodyEncoder(Module):
    """Two bidirectional GRU layers over the [B, T, 3] prosody track."""

    def __init__(self, rng, cfg: ProsodyStreamConfig | None = None,
                 dtype=None):
        cfg = cfg or ProsodyStreamConfig()
        self.cfg = cfg
        self.fw1 = GRUCell(rng, cfg.d_in, cfg.hidden, dtype=dtype)
        self.bw1 = GRUCell(rng, cfg.d_in, cfg.hidden, dtype=dtype)
        self.fw2 = GRUCell(rng, cfg.d_out, cfg.hidden, dtype=dtype)
        self.bw2 = GRUCell(rng, cfg.d_out, cfg.hidden, dtype=dtype)

    def __call__(self, prosody) -> Tensor:
        data = prosody.data if isinstance(prosody, Tensor) else \
            np.asarray(prosody, dtype=self.fw1.wx.dtype)
        if data.ndim != 3 or data.shape[-1] != self.cfg.d_in:
            raise ShapeError(
                f"prosody encoder expects [B, T, {self.cfg.d_in}], "
                f"got {data.shape}")
        steps = [Tensor(np.ascontiguousarray(data[:, t, :]))
                 for t in range(data.shape[1])]
        layer = self._bidirectional(self.fw1, self.bw1, steps)
        layer = self._bidirectional(self.fw2, self.bw2, layer)
        return stack_time(layer)

    @staticmethod
    def _bidirectional(fw: GRUCell, bw: GRUCell, steps) -> list:
        fwd = run_gru(fw, steps)
        bwd = run_gru(bw, steps[::-1])[::-1]
        return [tc.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]


class AttentionPooler(Module):
    """Score frames with u . tanh(W z + b), softmax over time, then mix."""

    def __init__(self, rng, dim: int = D_PROSODY, dtype=None):
        self.proj = Linear(rng, dim, dim, dtype=dtype)
        self.score = Linear(rng, dim, 1, dtype=dtype)

    def attention_weights(self, z: Tensor) -> Tensor:
        b, t, _ = z.shape
        scores = tc.reshape(self.score(tc.tanh(self.proj(z))), (b, t))
        return tc.softmax_lastdim(scores)

    def __call__(self, z: Tensor) -> Tensor:
        b, t, d = z.shape
        weights = tc.reshape(self.attention_weights(z), (b, t, 1))
        return tc.sum_over_axis(tc.mul(z, weights), axis=1)


def prosody_matcher_pool(z: Tensor) -> Tensor:
    """Plain time mean of query prosody features."""
    return tc.mean_over_axis(z, axis=1)
