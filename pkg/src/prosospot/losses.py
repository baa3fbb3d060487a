"""Composite training objective.

Four parts: utterance-level BCE on the decision score, an audio-text
contrastive term over pooled phoneme segments, an audio-audio contrastive
term over enrollment/query segment pairs of positive trials, and a cosine
pull between the prosodic signatures of positive pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .fusion import cosine_similarity
from .tensorcore import Tensor

NORM_EPS = 1e-12
COSINE_EPS = 1e-8
SCORE_CLAMP = 1e-7


class DegenerateBatchError(ValueError):
    """Raised when a contrastive term has too few candidates to contrast."""


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    tau: float = 0.07

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def _zero_scalar(dtype=np.float32) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def utterance_bce(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; scores clamped away from {0, 1}."""
    y = np.asarray(labels, dtype=scores.dtype)
    if y.shape != scores.shape:
        raise tc.ShapeError(
            f"labels {y.shape} do not match scores {scores.shape}")
    s = tc.clamp(scores, lo=SCORE_CLAMP, hi=1.0 - SCORE_CLAMP)
    pos = tc.mul(tc.log(s), y)
    neg = tc.mul(tc.log(tc.sub(1.0, s)), 1.0 - y)
    return tc.neg(tc.mean_all(tc.add(pos, neg)))


def _unit_rows(x: Tensor) -> Tensor:
    norms = tc.sqrt(tc.add(tc.sum_over_axis(tc.mul(x, x), 1, keepdims=True),
                           NORM_EPS))
    return tc.div(x, tc.clamp(norms, lo=COSINE_EPS))


def info_nce(anchors: Tensor, candidates: Tensor, targets, tau: float) -> Tensor:
    """Sum over anchors of -log softmax(cos/tau) at the target candidate.

    The denominator runs over every candidate, the target included.
    """
    if candidates.shape[0] < 2:
        raise DegenerateBatchError(
            f"contrastive term needs at least 2 candidate segments, got "
            f"{candidates.shape[0]}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (anchors.shape[0],):
        raise tc.ShapeError(
            f"targets {targets.shape} do not match anchors {anchors.shape}")
    sims = tc.matmul(_unit_rows(anchors),
                     tc.swapaxes(_unit_rows(candidates), 0, 1))
    log_probs = tc.log(tc.softmax_lastdim(tc.mul(sims, 1.0 / tau)))
    one_hot = np.zeros(log_probs.shape, dtype=log_probs.dtype)
    one_hot[np.arange(targets.size), targets] = 1.0
    return tc.neg(tc.sum_all(tc.mul(log_probs, one_hot)))


def infonce_audio_text(z_segments: Tensor, e_segments: Tensor,
                       tau: float = LossConfig.tau) -> Tensor:
    """Query phoneme segments against every text embedding in the batch."""
    if z_segments.shape != e_segments.shape:
        raise tc.ShapeError(
            f"segment stacks differ: {z_segments.shape} vs "
            f"{e_segments.shape}")
    return info_nce(z_segments, e_segments,
                    np.arange(z_segments.shape[0]), tau)


def infonce_audio_audio(z_query_segments, z_enroll_segments,
                        tau: float = LossConfig.tau,
                        stats: dict | None = None) -> Tensor:
    """Same form over paired enrollment/query segments of positive trials.

    A batch with no positive trial contributes exactly zero; the skip is
    counted in ``stats['aa_skipped']`` when a dict is given.
    """
    if z_query_segments is None or z_query_segments.shape[0] == 0:
        if stats is not None:
            stats["aa_skipped"] = stats.get("aa_skipped", 0) + 1
        return _zero_scalar()
    if z_query_segments.shape != z_enroll_segments.shape:
        raise tc.ShapeError(
            f"segment stacks differ: {z_query_segments.shape} vs "
            f"{z_enroll_segments.shape}")
    return info_nce(z_query_segments, z_enroll_segments,
                    np.arange(z_query_segments.shape[0]), tau)


def prosody_similarity_loss(v_pro_q: Tensor, v_pro: Tensor, labels) -> Tensor:
    """Mean (1 - cosine) over positive trials; no positives -> 0."""
    y = np.asarray(labels)
    pos = np.flatnonzero(y == 1)
    if pos.size == 0:
        return _zero_scalar()
    q = tc.embedding_lookup(v_pro_q, pos)
    e = tc.embedding_lookup(v_pro, pos)
    return tc.mean_all(tc.sub(1.0, cosine_similarity(q, e)))


def total_loss(l_utt: Tensor, l_at: Tensor, l_aa: Tensor, l_pro: Tensor,
               cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    base = tc.add(tc.add(l_utt, l_at), l_aa)
    if cfg.lam == 0.0:
        return base
    return tc.add(base, tc.mul(l_pro, cfg.lam))
