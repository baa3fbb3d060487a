"""Assembled dual-stream spotter: encoders, fusion, scoring, checkpoints.

One Spotter owns the phoneme stream (audio encoder + segment pooling +
text embeddings), the prosody stream (BiGRU + attention pooling), and
the fusion stack (modulation, cross-attention, matcher, decision head).
Ablation switches degrade it in place: "film" bypasses modulation,
"prosody" zeroes the prosody stream's outputs (making the signature,
matcher vector, and s_pro exactly zero), and "lpro" only changes the
training objective, not the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .dsp import ProsodyStats
from .encoders import (AttentionPooler, AudioEncoder, PhonemeStreamConfig,
                       ProsodyEncoder, ProsodyStreamConfig, phoneme_pooler,
                       prosody_matcher_pool)
from .fusion import CrossAttention, DecisionHead, FilmModule, prosody_match
from .g2p import Alignment, make_embedding_table
from .layers import Module
from .tensorcore import Tensor
from .tensorcore.serialize import load_tensors, save_tensors

ABLATIONS = ("none", "film", "lpro", "prosody")
ABLATION_CODES = {name: float(i) for i, name in enumerate(ABLATIONS)}

PARAM_PREFIX = "param."
META_PREFIX = "meta."
OPT_PREFIX = "opt."


class CheckpointError(ValueError):
    """Checkpoint contents do not match the model being loaded."""


@dataclass(frozen=True)
class SpotterConfig:
    init_seed: int = 0
    ablation: str = "none"
    fusion_heads: int = 4
    decision_hidden: int = 64
    phoneme: PhonemeStreamConfig = field(default_factory=PhonemeStreamConfig)
    prosody: ProsodyStreamConfig = field(default_factory=ProsodyStreamConfig)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; "
                             f"choose from {ABLATIONS}")


@dataclass
class TrialInputs:
    """Precomputed features for one trial; arrays are plain numpy."""
    fbank_e: np.ndarray        # [T, 80] float32
    fbank_q: np.ndarray
    prosody_e: np.ndarray      # [T, 3] float32, normalized
    prosody_q: np.ndarray
    segments_e: list           # keyword [start, end) on the subsampled grid
    segments_q: list
    text_ids: np.ndarray       # enrollment keyword phoneme ids
    query_ids: np.ndarray      # query's true keyword phoneme ids
    label: int

    def __post_init__(self):
        if len(self.query_ids) != len(self.segments_q):
            raise ValueError(
                f"query has {len(self.segments_q)} segments but "
                f"{len(self.query_ids)} phoneme ids")
        if self.label == 1 and len(self.segments_e) != len(self.segments_q):
            # positives pair enrollment and query segments row-by-row
            raise ValueError(
                f"positive trial has {len(self.segments_e)} enrollment "
                f"segments but {len(self.segments_q)} query segments")


@dataclass
class BatchOutputs:
    """Everything the composite objective consumes, still on the tape."""
    scores: Tensor                  # [B]
    s_pro: Tensor                   # [B]
    v_pro: Tensor                   # [B, 64] enrollment signatures
    v_query: Tensor                 # [B, 64] matcher-pooled query prosody
    query_segments: Tensor          # [N, 128] pooled segments, all trials
    query_ids: np.ndarray           # [N] matching phoneme ids
    pos_enroll_segments: Tensor | None  # [M, 128] positive trials only
    pos_query_segments: Tensor | None
    labels: np.ndarray              # [B]


class Spotter(Module):
    def __init__(self, config: SpotterConfig | None = None, dtype=None):
        cfg = config or SpotterConfig()
        self.config = cfg
        self.dtype = np.dtype(dtype or np.float32)
        rng = np.random.default_rng(cfg.init_seed)
        self.embedding = make_embedding_table(rng, cfg.phoneme.d_model,
                                              dtype=dtype)
        self.audio_encoder = AudioEncoder(rng, cfg.phoneme, dtype=dtype)
        self.prosody_encoder = ProsodyEncoder(rng, cfg.prosody, dtype=dtype)
        self.prosody_pooler = AttentionPooler(rng, cfg.prosody.d_out,
                                              dtype=dtype)
        self.film = FilmModule(rng, cfg.prosody.d_out, cfg.phoneme.d_model,
                               dtype=dtype)
        self.cross_attention = CrossAttention(rng, cfg.phoneme.d_model,
                                              cfg.fusion_heads,
                                              residual_ln=True, dtype=dtype)
        self.decision = DecisionHead(rng, cfg.phoneme.d_model,
                                     cfg.prosody.d_out, cfg.decision_hidden,
                                     dtype=dtype)

    # -- stream front halves ------------------------------------------------

    def encode_audio(self, fbank) -> Tensor:
        x = fbank if isinstance(fbank, Tensor) else \
            Tensor(np.asarray(fbank, dtype=self.dtype))
        return self.audio_encoder(x)

    def prosody_states(self, tracks) -> Tensor:
        """BiGRU states [B, T, 64]; the prosody ablation zeroes them."""
        if self.config.ablation == "prosody":
            data = tracks.data if isinstance(tracks, Tensor) else tracks
            b, t, _ = np.asarray(data).shape
            return Tensor(np.zeros((b, t, self.config.prosody.d_out),
                                   dtype=self.dtype))
        x = tracks if isinstance(tracks, Tensor) else \
            Tensor(np.asarray(tracks, dtype=self.dtype))
        return self.prosody_encoder(x)

    def signature(self, z_pro: Tensor) -> Tensor:
        if self.config.ablation == "prosody":
            # constant zeros: keeps the pooler out of the graph entirely,
            # so its parameters see no gradient and no weight decay
            return Tensor(np.zeros((z_pro.shape[0],
                                    self.config.prosody.d_out),
                                   dtype=self.dtype))
        return self.prosody_pooler(z_pro)

    def matcher_vector(self, z_pro: Tensor) -> Tensor:
        if self.config.ablation == "prosody":
            return Tensor(np.zeros((z_pro.shape[0],
                                    self.config.prosody.d_out),
                                   dtype=self.dtype))
        return prosody_matcher_pool(z_pro)

    def embed_text(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        emb = tc.embedding_lookup(self.embedding, ids)
        return tc.reshape(emb, (1, len(ids), self.embedding.shape[1]))

    def pool_query(self, z_audio_row: Tensor, segments) -> Tensor:
        return phoneme_pooler(z_audio_row, Alignment(segments=list(segments)))

    # -- fusion back half ---------------------------------------------------

    def fuse(self, pooled_q: Tensor, text: Tensor, v_pro: Tensor,
             v_query: Tensor) -> tuple[Tensor, Tensor]:
        """Score pooled query segments against text under one signature.

        v_pro is the enrollment-role signature: it drives the modulation,
        the matcher comparison, and the decision-head conditioning, so a
        substituted vector (e.g. an interpolated signature) takes effect
        at every consumption point at once.  Returns (score, s_pro).
        """
        s_pro = prosody_match(v_query, v_pro)
        modulated = pooled_q if self.config.ablation == "film" \
            else self.film(pooled_q, v_pro)
        z_at = self.cross_attention(modulated, text)
        score = self.decision(z_at, v_pro, s_pro)
        return score, s_pro

    # -- batched trial scoring ----------------------------------------------

    def forward(self, trials: list) -> BatchOutputs:
        b = len(trials)
        if b == 0:
            raise ValueError("empty trial batch")
        fbank = np.stack([t.fbank_e for t in trials]
                         + [t.fbank_q for t in trials]).astype(self.dtype)
        tracks = np.stack([t.prosody_e for t in trials]
                          + [t.prosody_q for t in trials]).astype(self.dtype)
        z_audio = self.encode_audio(fbank)
        z_pro = self.prosody_states(tracks)
        z_audio_e = tc.slice_axis(z_audio, 0, 0, b)
        z_audio_q = tc.slice_axis(z_audio, 0, b, 2 * b)
        v_pro = self.signature(tc.slice_axis(z_pro, 0, 0, b))
        v_query = self.matcher_vector(tc.slice_axis(z_pro, 0, b, 2 * b))

        d = self.config.phoneme.d_model
        score_rows, s_pro_rows, seg_rows, id_rows = [], [], [], []
        pos_enroll, pos_query = [], []
        for i, trial in enumerate(trials):
            pooled_q = self.pool_query(
                tc.slice_axis(z_audio_q, 0, i, i + 1), trial.segments_q)
            v_i = tc.slice_axis(v_pro, 0, i, i + 1)
            vq_i = tc.slice_axis(v_query, 0, i, i + 1)
            score_i, s_pro_i = self.fuse(
                pooled_q, self.embed_text(trial.text_ids), v_i, vq_i)
            score_rows.append(score_i)
            s_pro_rows.append(s_pro_i)
            flat_q = tc.reshape(pooled_q, (len(trial.segments_q), d))
            seg_rows.append(flat_q)
            id_rows.append(np.asarray(trial.query_ids, dtype=np.int64))
            if trial.label == 1:
                pooled_e = self.pool_query(
                    tc.slice_axis(z_audio_e, 0, i, i + 1), trial.segments_e)
                pos_enroll.append(
                    tc.reshape(pooled_e, (len(trial.segments_e), d)))
                pos_query.append(flat_q)

        return BatchOutputs(
            scores=tc.concat(score_rows, axis=0),
            s_pro=tc.concat(s_pro_rows, axis=0),
            v_pro=v_pro,
            v_query=v_query,
            query_segments=tc.concat(seg_rows, axis=0),
            query_ids=np.concatenate(id_rows),
            pos_enroll_segments=(tc.concat(pos_enroll, axis=0)
                                 if pos_enroll else None),
            pos_query_segments=(tc.concat(pos_query, axis=0)
                                if pos_query else None),
            labels=np.array([t.label for t in trials], dtype=np.float32))

    def score_trials(self, trials: list) -> np.ndarray:
        """Plain scores for evaluation; no gradients recorded."""
        return self.forward(trials).scores.data.copy()


# ---------------------------------------------------------------------------
# Checkpoints


def ablation_from_code(code: float) -> str:
    for name, value in ABLATION_CODES.items():
        if value == float(code):
            return name
    raise CheckpointError(f"unknown ablation code {code}")


def save_checkpoint(path, model: Spotter, optimizer=None,
                    stats: ProsodyStats | None = None,
                    meta: dict | None = None) -> None:
    """Write parameters (+ optimizer moments, prosody stats, metadata)."""
    arrays = {PARAM_PREFIX + name: t.data
              for name, t in model.parameters().items()}
    if optimizer is not None:
        arrays.update({name: t.data
                       for name, t in optimizer.state_tensors().items()})
    if stats is not None:
        arrays.update(stats.to_arrays())
    cfg = model.config
    fields = {"ablation": ABLATION_CODES[cfg.ablation],
              "init_seed": float(cfg.init_seed),
              "trained": 0.0,
              "arch.fusion_heads": float(cfg.fusion_heads),
              "arch.decision_hidden": float(cfg.decision_hidden),
              "arch.d_model": float(cfg.phoneme.d_model),
              "arch.n_blocks": float(cfg.phoneme.n_blocks),
              "arch.n_heads": float(cfg.phoneme.n_heads),
              "arch.conv_kernel": float(cfg.phoneme.conv_kernel),
              "arch.ff_expansion": float(cfg.phoneme.ff_expansion),
              "arch.max_frames": float(cfg.phoneme.max_frames),
              "arch.pro_hidden": float(cfg.prosody.hidden),
              "arch.pro_layers": float(cfg.prosody.layers),
              "arch.pro_d_in": float(cfg.prosody.d_in)}
    fields.update(meta or {})
    for key, value in fields.items():
        arrays[META_PREFIX + key] = np.array([float(value)],
                                             dtype=np.float64)
    save_tensors(path, arrays)


def read_meta(arrays: dict) -> dict:
    return {key[len(META_PREFIX):]: float(np.asarray(val).reshape(-1)[0])
            for key, val in arrays.items() if key.startswith(META_PREFIX)}


def load_checkpoint(path, model: Spotter, optimizer=None):
    """Load arrays into an existing model; returns (meta, stats).

    Parameter paths must match the model exactly; anything missing or
    unexpected is a versioning error.
    """
    arrays = load_tensors(path)
    meta = read_meta(arrays)
    if "ablation" in meta and \
            ablation_from_code(meta["ablation"]) != model.config.ablation:
        raise CheckpointError(
            f"checkpoint was written by a "
            f"{ablation_from_code(meta['ablation'])!r}-ablation model, "
            f"not {model.config.ablation!r}")
    have = {k for k in arrays if k.startswith(PARAM_PREFIX)}
    want = {PARAM_PREFIX + name for name in model.parameters()}
    if have != want:
        missing = sorted(want - have)[:4]
        unexpected = sorted(have - want)[:4]
        raise CheckpointError(
            f"checkpoint does not match model: missing {missing}, "
            f"unexpected {unexpected}")
    for name, tensor in model.parameters().items():
        value = arrays[PARAM_PREFIX + name]
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name} has shape {value.shape}, model expects "
                f"{tensor.data.shape}")
        tensor.data = value.astype(tensor.data.dtype, copy=True)
    if optimizer is not None:
        optimizer.load_state({k: v for k, v in arrays.items()
                              if k.startswith(OPT_PREFIX)})
    stats = ProsodyStats.from_arrays(arrays) \
        if "prosody_stats.mean" in arrays else None
    return meta, stats


def config_from_meta(meta: dict) -> SpotterConfig:
    required = ("ablation", "init_seed", "arch.d_model", "arch.pro_hidden")
    if any(key not in meta for key in required):
        raise CheckpointError("missing model metadata")
    return SpotterConfig(
        init_seed=int(meta["init_seed"]),
        ablation=ablation_from_code(meta["ablation"]),
        fusion_heads=int(meta["arch.fusion_heads"]),
        decision_hidden=int(meta["arch.decision_hidden"]),
        phoneme=PhonemeStreamConfig(
            d_model=int(meta["arch.d_model"]),
            n_blocks=int(meta["arch.n_blocks"]),
            n_heads=int(meta["arch.n_heads"]),
            conv_kernel=int(meta["arch.conv_kernel"]),
            ff_expansion=int(meta["arch.ff_expansion"]),
            max_frames=int(meta["arch.max_frames"])),
        prosody=ProsodyStreamConfig(
            d_in=int(meta["arch.pro_d_in"]),
            hidden=int(meta["arch.pro_hidden"]),
            layers=int(meta["arch.pro_layers"])))


def load_spotter(path):
    """Build the right Spotter for a checkpoint, then load into it.

    Returns (model, meta, stats).
    """
    arrays = load_tensors(path)
    meta = read_meta(arrays)
    model = Spotter(config_from_meta(meta))
    loaded_meta, stats = load_checkpoint(path, model)
    return model, loaded_meta, stats
