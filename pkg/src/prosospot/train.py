"""Training loop: feature cache, stratified batches, composite objective.

Features are precomputed once per utterance (filterbank + raw prosody
track), prosody normalization statistics come from the training split
only, and every epoch reshuffles positives and negatives separately so
each batch holds half positives and half negatives with the negative
kinds interleaved evenly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import dsp
from . import tensorcore as tc
from .losses import (LossConfig, infonce_audio_audio, infonce_audio_text,
                     prosody_similarity_loss, total_loss, utterance_bce)
from .model import BatchOutputs, Spotter, TrialInputs
from .optimizer import AdamW, ScheduleConfig, clip_global_norm, lr_at
from .synthdata import Corpus

NEGATIVE_CYCLE = ("easy", "hard", "intent_mismatch")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    peak_lr: float = 3e-4
    warmup_epochs: int = 5
    weight_decay: float = 1e-3
    clip_norm: float = 5.0
    lam: float = 0.5
    tau: float = 0.07
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(
                f"batch_size must be even and >= 2 to hold both classes, "
                f"got {self.batch_size}")
        if self.epochs <= self.warmup_epochs:
            raise ValueError(
                f"epochs ({self.epochs}) must exceed warmup "
                f"({self.warmup_epochs})")


@dataclass
class UtteranceFeatures:
    fbank: np.ndarray          # [T, 80] float32
    track: dsp.ProsodyTrack    # raw, un-normalized
    segments: list             # keyword spans on the subsampled grid
    phoneme_ids: np.ndarray    # keyword phoneme ids, one per segment


def utterance_features(corpus: Corpus, spec) -> UtteranceFeatures:
    utt = corpus.realize(spec)
    segments = [tuple(seg) for seg in utt.keyword_segments]
    ids = np.asarray(utt.phonemes.ids[1:-1], dtype=np.int64)
    return UtteranceFeatures(
        fbank=dsp.compute_fbank(utt.waveform).values,
        track=dsp.compute_prosody(utt.waveform),
        segments=segments,
        phoneme_ids=ids)


def corpus_features(corpus: Corpus, indices=None) -> dict:
    """Features for every utterance (or just `indices`), keyed by index."""
    wanted = None if indices is None else set(indices)
    out = {}
    for spec in corpus.utterance_specs():
        if wanted is None or spec.index in wanted:
            out[spec.index] = utterance_features(corpus, spec)
    return out


def split_indices(corpus: Corpus, split: str) -> list:
    seen = []
    for trial in corpus.trials[split]:
        for spec in (trial.enroll, trial.query):
            if spec.index not in seen:
                seen.append(spec.index)
    return sorted(seen)


def fit_prosody_stats(features: dict, indices) -> dsp.ProsodyStats:
    return dsp.compute_prosody_stats(
        [features[i].track for i in sorted(indices)])


def prepare_trials(corpus: Corpus, split: str, features: dict,
                   stats: dsp.ProsodyStats) -> list:
    """(TrialInputs, negative_kind) pairs with normalization done once."""
    normalized = {}

    def norm(index):
        if index not in normalized:
            normalized[index] = dsp.normalize_prosody(
                features[index].track, stats)
        return normalized[index]

    out = []
    for trial in corpus.trials[split]:
        fe = features[trial.enroll.index]
        fq = features[trial.query.index]
        inputs = TrialInputs(
            fbank_e=fe.fbank, fbank_q=fq.fbank,
            prosody_e=norm(trial.enroll.index),
            prosody_q=norm(trial.query.index),
            segments_e=fe.segments, segments_q=fq.segments,
            text_ids=fe.phoneme_ids, query_ids=fq.phoneme_ids,
            label=trial.label)
        out.append((inputs, trial.negative_kind))
    return out


def _interleave_kinds(negatives: dict, order=NEGATIVE_CYCLE) -> list:
    queues = [list(negatives.get(kind, ())) for kind in order]
    out = []
    while any(queues):
        for q in queues:
            if q:
                out.append(q.pop(0))
    return out


def steps_per_epoch(trials: list, batch_size: int) -> int:
    n_pos = sum(1 for t, _ in trials if t.label == 1)
    n_neg = len(trials) - n_pos
    n = min(n_pos, n_neg) // (batch_size // 2)
    if n < 1:
        raise ValueError(
            f"not enough trials for one batch of {batch_size} "
            f"({n_pos} positives, {n_neg} negatives)")
    return n


def epoch_batches(trials: list, batch_size: int, rng) -> list:
    """Half positives, half negatives per batch; kinds interleaved."""
    pos = [t for t, _ in trials if t.label == 1]
    negatives = {}
    for t, kind in trials:
        if t.label == 0:
            negatives.setdefault(kind, []).append(t)
    pos = [pos[i] for i in rng.permutation(len(pos))]
    for kind in negatives:
        bucket = negatives[kind]
        negatives[kind] = [bucket[i] for i in rng.permutation(len(bucket))]
    neg = _interleave_kinds(negatives)
    half = batch_size // 2
    batches = []
    for k in range(min(len(pos), len(neg)) // half):
        batches.append(pos[k * half:(k + 1) * half]
                       + neg[k * half:(k + 1) * half])
    return batches


@dataclass
class LossParts:
    total: tc.Tensor
    l_utt: tc.Tensor
    l_at: tc.Tensor
    l_aa: tc.Tensor
    l_pro: tc.Tensor
    aa_skipped: bool


def batch_losses(model: Spotter, out: BatchOutputs,
                 cfg: LossConfig) -> LossParts:
    l_utt = utterance_bce(out.scores, out.labels)
    candidates = tc.embedding_lookup(model.embedding, out.query_ids)
    l_at = infonce_audio_text(out.query_segments, candidates, cfg.tau)
    aa_stats = {}
    l_aa = infonce_audio_audio(out.pos_query_segments,
                               out.pos_enroll_segments, cfg.tau,
                               stats=aa_stats)
    l_pro = prosody_similarity_loss(out.v_query, out.v_pro, out.labels)
    return LossParts(
        total=total_loss(l_utt, l_at, l_aa, l_pro, cfg),
        l_utt=l_utt, l_at=l_at, l_aa=l_aa, l_pro=l_pro,
        aa_skipped=bool(aa_stats.get("aa_skipped", 0)))


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    loss: float
    loss_utt: float
    loss_at: float
    loss_aa: float
    loss_pro: float
    grad_norm: float
    note: str


@dataclass
class TrainResult:
    stats: dsp.ProsodyStats
    history: list
    schedule: ScheduleConfig
    steps: int


LOG_COLUMNS = ("step", "epoch", "lr", "loss", "loss_utt", "loss_at",
               "loss_aa", "loss_pro", "grad_norm", "note")


def write_training_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for rec in history:
            writer.writerow([rec.step, rec.epoch, f"{rec.lr:.10g}",
                             f"{rec.loss:.8g}", f"{rec.loss_utt:.8g}",
                             f"{rec.loss_at:.8g}", f"{rec.loss_aa:.8g}",
                             f"{rec.loss_pro:.8g}", f"{rec.grad_norm:.8g}",
                             rec.note])


def train_spotter(model: Spotter, corpus: Corpus,
                  cfg: TrainConfig | None = None,
                  on_step=None) -> TrainResult:
    """Train in place on the corpus' train split; returns stats + history.

    lam is forced to 0 for the "lpro" ablation; the other ablations keep
    the full objective and degrade only the network.
    """
    cfg = cfg or TrainConfig()
    indices = split_indices(corpus, "train")
    features = corpus_features(corpus, indices)
    stats = fit_prosody_stats(features, indices)
    trials = prepare_trials(corpus, "train", features, stats)

    lam = 0.0 if model.config.ablation == "lpro" else cfg.lam
    loss_cfg = LossConfig(lam=lam, tau=cfg.tau)
    schedule = ScheduleConfig(steps_per_epoch=steps_per_epoch(
        trials, cfg.batch_size), total_epochs=cfg.epochs,
        warmup_epochs=cfg.warmup_epochs, peak_lr=cfg.peak_lr)
    params = model.parameters()
    optimizer = AdamW(params, lr=cfg.peak_lr,
                      weight_decay=cfg.weight_decay)

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.shuffle_seed, epoch)))
        for batch in epoch_batches(trials, cfg.batch_size, rng):
            lr = lr_at(step, schedule)
            optimizer.zero_grad()
            with tc.Tape() as tape:
                out = model.forward(batch)
                parts = batch_losses(model, out, loss_cfg)
            tape.backward(parts.total)
            norm = clip_global_norm(params, cfg.clip_norm)
            stepped = optimizer.step(lr=lr)
            notes = []
            if not stepped:
                notes.append("skipped_nonfinite")
            if parts.aa_skipped:
                notes.append("aa_skipped")
            record = StepRecord(
                step=step, epoch=epoch, lr=lr,
                loss=float(parts.total.data),
                loss_utt=float(parts.l_utt.data),
                loss_at=float(parts.l_at.data),
                loss_aa=float(parts.l_aa.data),
                loss_pro=float(parts.l_pro.data),
                grad_norm=norm, note="+".join(notes))
            history.append(record)
            if on_step is not None:
                on_step(record)
            step += 1
    return TrainResult(stats=stats, history=history, schedule=schedule,
                       steps=step)
