"""Detection metrics, benchmark reports, signature analyses.

compute_auc is the exact Mann-Whitney statistic (ties count half) via
midranks; compute_eer sweeps every distinct score as a threshold and
linearly interpolates FAR/FRR at the sign change.  The higher-level
entry points score manifests with a frozen checkpoint and write the
delimited reports and figures the CLI exposes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as _scipy_stats

from . import dsp
from . import tensorcore as tc
from .fusion import interpolate_signature
from .g2p import default_inventory
from .model import Spotter, TrialInputs, load_spotter
from .synthdata import SPLIT_NAMES, Corpus, load_manifest
from .train import (TrainConfig, corpus_features, prepare_trials,
                    split_indices, train_spotter)

ALPHA_GRID = tuple(float(a) for a in np.linspace(0.0, 1.0, 11))


class MetricError(ValueError):
    """A metric was requested on a set missing one of the classes."""


class UntrainedCheckpointError(ValueError):
    """Analysis refused because the checkpoint was never trained."""


@dataclass(frozen=True)
class ScoredTrialSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        if scores.ndim != 1 or scores.shape != labels.shape:
            raise ValueError(
                f"scores {scores.shape} and labels {labels.shape} must be "
                f"matching vectors")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")

    def require_both_classes(self, what: str) -> None:
        if not np.any(self.labels == 1) or not np.any(self.labels == 0):
            raise MetricError(
                f"{what} undefined: need at least one positive and one "
                f"negative trial")


def compute_auc(trial_set: ScoredTrialSet) -> float:
    """P(score_pos > score_neg) + 1/2 P(tie), exact over all pairs."""
    trial_set.require_both_classes("AUC")
    scores = trial_set.scores
    labels = trial_set.labels
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and \
                scores[order[j + 1]] == scores[order[i]]:
            j += 1
        # midrank: ties share the average of their 1-based rank span
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    u = np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _far_frr(scores, labels, thresholds):
    neg = scores[labels == 0]
    pos = scores[labels == 1]
    far = np.array([np.mean(neg >= t) for t in thresholds])
    frr = np.array([np.mean(pos < t) for t in thresholds])
    return far, frr


def compute_eer(trial_set: ScoredTrialSet) -> tuple[float, float]:
    """(EER, threshold): FAR(t)=frac neg >= t, FRR(t)=frac pos < t.

    Sweeps the distinct scores ascending plus one virtual threshold
    above the maximum (FAR 0, FRR 1) so the crossing always exists, and
    interpolates linearly where FAR - FRR changes sign.
    """
    trial_set.require_both_classes("EER")
    scores = trial_set.scores
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far, frr = _far_frr(scores, trial_set.labels, thresholds)
    diff = far - frr
    for k in range(len(thresholds)):
        if diff[k] == 0.0:
            return float(far[k]), float(thresholds[k])
        if diff[k] < 0.0:
            # sign change between k-1 and k (diff starts at +1)
            w = diff[k - 1] / (diff[k - 1] - diff[k])
            eer = far[k - 1] + w * (far[k] - far[k - 1])
            thr = thresholds[k - 1] + w * (thresholds[k]
                                           - thresholds[k - 1])
            return float(eer), float(thr)
    raise MetricError("FAR/FRR never crossed; scores are inconsistent")


# ---------------------------------------------------------------------------
# Scoring manifests and corpora


@dataclass
class _UtteranceView:
    """The per-utterance facts scoring needs, however they were stored."""
    index: int
    fbank: np.ndarray
    prosody: np.ndarray      # normalized
    segments: list
    phoneme_ids: np.ndarray
    intent: str
    accent: str
    word: str


class RecordCache:
    """Lazily compute features for manifest utterance records."""

    def __init__(self, wav_root, stats: dsp.ProsodyStats):
        self.wav_root = Path(wav_root)
        self.stats = stats
        self.inventory = default_inventory()
        self._views: dict[int, _UtteranceView] = {}

    def view(self, record: dict) -> _UtteranceView:
        index = int(record["index"])
        if index not in self._views:
            wav = dsp.read_wav(self.wav_root / record["wav"])
            track = dsp.compute_prosody(wav)
            segments = [tuple(seg) for seg in record["alignment"][1:-1]]
            ids = np.array([self.inventory.id_of(s)
                            for s in record["phonemes"][1:-1]],
                           dtype=np.int64)
            self._views[index] = _UtteranceView(
                index=index,
                fbank=dsp.compute_fbank(wav).values,
                prosody=dsp.normalize_prosody(track, self.stats),
                segments=segments, phoneme_ids=ids,
                intent=record["intent"], accent=record["accent"],
                word=record["word"])
        return self._views[index]

    def trial_inputs(self, record: dict) -> TrialInputs:
        enroll = self.view(record["enroll"])
        query = self.view(record["query"])
        return TrialInputs(
            fbank_e=enroll.fbank, fbank_q=query.fbank,
            prosody_e=enroll.prosody, prosody_q=query.prosody,
            segments_e=enroll.segments, segments_q=query.segments,
            text_ids=enroll.phoneme_ids, query_ids=query.phoneme_ids,
            label=int(record["label"]))


def score_records(model: Spotter, records: list, cache: RecordCache,
                  batch_size: int = 16) -> np.ndarray:
    scores = np.empty(len(records), dtype=np.float64)
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        inputs = [cache.trial_inputs(r) for r in chunk]
        scores[start:start + len(chunk)] = model.score_trials(inputs)
    return scores


def _require_trained(meta: dict, what: str) -> None:
    if meta.get("trained", 0.0) != 1.0:
        raise UntrainedCheckpointError(
            f"{what} needs a trained checkpoint; this one is untrained")


def split_metrics(scores: np.ndarray, labels: np.ndarray) -> dict:
    trial_set = ScoredTrialSet(scores, labels)
    eer, thr = compute_eer(trial_set)
    return {"auc": compute_auc(trial_set), "eer": eer,
            "eer_threshold": thr, "n_trials": int(len(labels)),
            "n_positive": int(np.sum(labels == 1))}


def smoke_manifest_path() -> Path:
    """Five bundled trials for exercising the report path without audio."""
    return Path(__file__).parent / "data" / "smoke_manifest.jsonl"


def oracle_scorer(record: dict) -> float:
    """Scores each trial by its own label: perfect separation by design."""
    return float(record["label"])


def run_benchmark(manifest_path, out_dir, checkpoint=None, scorer=None,
                  batch_size: int = 16, make_figures: bool = True) -> dict:
    """Score every manifest trial; write report.json / report.csv.

    Either a checkpoint path (frozen model scoring) or a `scorer`
    callable mapping one trial record to a float must be given.  The
    report is deterministic byte-for-byte for fixed inputs.
    """
    records = load_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scorer is not None:
        scores = np.array([float(scorer(r)) for r in records],
                          dtype=np.float64)
    elif checkpoint is not None:
        model, meta, stats = load_spotter(checkpoint)
        if stats is None:
            raise ValueError(
                "checkpoint carries no prosody statistics; cannot score")
        cache = RecordCache(Path(manifest_path).parent, stats)
        scores = score_records(model, records, cache, batch_size)
    else:
        raise ValueError("run_benchmark needs a checkpoint or a scorer")

    labels = np.array([int(r["label"]) for r in records])
    splits = sorted({r["split"] for r in records},
                    key=lambda s: (SPLIT_NAMES.index(s)
                                   if s in SPLIT_NAMES else len(SPLIT_NAMES),
                                   s))
    report = {"splits": {}}
    for split in splits:
        mask = np.array([r["split"] == split for r in records])
        report["splits"][split] = split_metrics(scores[mask], labels[mask])

    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "label", "negative_kind", "enroll_index",
                         "query_index", "score"])
        for record, score in zip(records, scores):
            writer.writerow([record["split"], record["label"],
                             record["negative_kind"],
                             record["enroll"]["index"],
                             record["query"]["index"], f"{score:.10g}"])
    if make_figures:
        from . import plots
        for split in splits:
            mask = np.array([r["split"] == split for r in records])
            plots.score_histogram(scores[mask], labels[mask],
                                  out / f"scores_{split}.png", title=split)
        plots.roc_curves(
            {split: (scores[np.array([r["split"] == split
                                      for r in records])],
                     labels[np.array([r["split"] == split
                                      for r in records])])
             for split in splits}, out / "roc.png")
    return report


# ---------------------------------------------------------------------------
# Interpolation sweep


@dataclass
class SweepResult:
    alphas: np.ndarray
    scores: np.ndarray
    spearman_rho: float

    @property
    def s0(self) -> float:
        return float(self.scores[0])

    @property
    def s1(self) -> float:
        return float(self.scores[-1])


def sweep_trial(model: Spotter, enroll: _UtteranceView,
                query_pos: _UtteranceView,
                query_neg: _UtteranceView) -> SweepResult:
    """Score the positive pair under signatures slid toward the negative.

    v(0) is the enrollment's own signature (unmodified positive score);
    v(1) is the mismatched-intent rendering's signature.  Each v(alpha)
    replaces the enrollment signature at every consumption point.
    """
    z_audio = model.encode_audio(query_pos.fbank[None])
    pooled = model.pool_query(z_audio, query_pos.segments)
    text = model.embed_text(enroll.phoneme_ids)
    z_pro = model.prosody_states(np.stack([enroll.prosody,
                                           query_neg.prosody,
                                           query_pos.prosody]))
    v_pos = model.signature(tc.slice_axis(z_pro, 0, 0, 1))
    v_neg = model.signature(tc.slice_axis(z_pro, 0, 1, 2))
    v_query = model.matcher_vector(tc.slice_axis(z_pro, 0, 2, 3))

    scores = []
    for alpha in ALPHA_GRID:
        v_interp = interpolate_signature(v_pos, v_neg, alpha)
        score, _ = model.fuse(pooled, text, v_interp, v_query)
        scores.append(float(score.data[0]))
    alphas = np.array(ALPHA_GRID)
    scores = np.array(scores)
    rho = float(_scipy_stats.spearmanr(alphas, scores).statistic)
    return SweepResult(alphas=alphas, scores=scores, spearman_rho=rho)


def interpolation_sweep(checkpoint, manifest_path, enroll_index: int,
                        query_pos_index: int, query_neg_index: int,
                        out_path=None) -> SweepResult:
    """Sweep one (enrollment, positive query, negative query) triple."""
    model, meta, stats = load_spotter(checkpoint)
    _require_trained(meta, "interpolation sweep")
    records = load_manifest(manifest_path)
    cache = RecordCache(Path(manifest_path).parent, stats)
    views = {}
    for record in records:
        for side in ("enroll", "query"):
            rec = record[side]
            views.setdefault(int(rec["index"]), rec)
    try:
        triple = [cache.view(views[i]) for i in
                  (enroll_index, query_pos_index, query_neg_index)]
    except KeyError as exc:
        raise ValueError(
            f"utterance index {exc.args[0]} not in manifest") from None
    result = sweep_trial(model, *triple)
    if out_path is not None:
        write_sweep_csv(out_path, result)
    return result


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "score"])
        for alpha, score in zip(result.alphas, result.scores):
            writer.writerow([f"{alpha:.2f}", f"{score:.10g}"])


def intent_triples(records: list) -> list:
    """(enroll, query_pos, query_neg) record triples from the intent split.

    The intent split is written in pairs: a positive trial and an
    intent-mismatch negative sharing the same enrollment rendering.
    """
    by_enroll = {}
    for record in records:
        if record["split"] != "test_intent":
            continue
        by_enroll.setdefault(record["enroll"]["index"], []).append(record)
    triples = []
    for _, pair in sorted(by_enroll.items()):
        pos = [r for r in pair if r["label"] == 1]
        neg = [r for r in pair if r["label"] == 0]
        for p, n in zip(pos, neg):
            triples.append((p["enroll"], p["query"], n["query"]))
    return triples


# ---------------------------------------------------------------------------
# Embedding export


@dataclass
class EmbeddingExport:
    indices: np.ndarray
    signatures: np.ndarray    # [N, 64]
    coords: np.ndarray        # [N, 2] PCA
    intents: list
    accents: list


def pca_two(x: np.ndarray) -> np.ndarray:
    """Top-2 principal coordinates via exact eigendecomposition."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValueError(
            f"PCA needs at least 3 utterances, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    basis = eigvecs[:, ::-1][:, :2]
    for k in range(2):
        # fix each axis sign by its largest-magnitude loading
        pivot = np.argmax(np.abs(basis[:, k]))
        if basis[pivot, k] < 0:
            basis[:, k] = -basis[:, k]
    return centered @ basis


def signatures_for_views(model: Spotter, views: list,
                         batch_size: int = 32) -> np.ndarray:
    out = []
    for start in range(0, len(views), batch_size):
        chunk = views[start:start + batch_size]
        tracks = np.stack([v.prosody for v in chunk])
        z_pro = model.prosody_states(tracks)
        out.append(model.signature(z_pro).data)
    return np.concatenate(out, axis=0)


def export_embeddings(checkpoint, manifest_path, out_csv,
                      out_png=None, split=None) -> EmbeddingExport:
    """One row per utterance: 64 signature values, PCA coords, tags."""
    model, meta, stats = load_spotter(checkpoint)
    _require_trained(meta, "embedding export")
    records = load_manifest(manifest_path)
    if split is not None:
        records = [r for r in records if r["split"] == split]
    cache = RecordCache(Path(manifest_path).parent, stats)
    seen = {}
    for record in records:
        for side in ("enroll", "query"):
            rec = record[side]
            seen.setdefault(int(rec["index"]), rec)
    if len(seen) < 3:
        raise ValueError(
            f"PCA needs at least 3 utterances, got {len(seen)}")
    views = [cache.view(seen[i]) for i in sorted(seen)]
    signatures = signatures_for_views(model, views)
    coords = pca_two(signatures)
    export = EmbeddingExport(
        indices=np.array([v.index for v in views]),
        signatures=signatures, coords=coords,
        intents=[v.intent for v in views],
        accents=[v.accent for v in views])
    write_embeddings_csv(out_csv, export)
    if out_png is not None:
        from . import plots
        plots.embedding_scatter(coords, export.intents, export.accents,
                                out_png)
    return export


def write_embeddings_csv(path, export: EmbeddingExport) -> None:
    dim = export.signatures.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "intent", "accent"]
                        + [f"v{k:02d}" for k in range(dim)]
                        + ["pc1", "pc2"])
        for i in range(len(export.indices)):
            writer.writerow(
                [int(export.indices[i]), export.intents[i],
                 export.accents[i]]
                + [f"{v:.8g}" for v in export.signatures[i]]
                + [f"{export.coords[i, 0]:.8g}",
                   f"{export.coords[i, 1]:.8g}"])


def cluster_contrast(coords: np.ndarray, tags: list) -> float:
    """Mean inter-tag centroid distance over mean intra-tag spread."""
    coords = np.asarray(coords, dtype=np.float64)
    groups = sorted(set(tags))
    if len(groups) < 2:
        raise ValueError("cluster contrast needs at least two groups")
    tags = np.asarray(tags)
    centroids = {g: coords[tags == g].mean(axis=0) for g in groups}
    inter = [np.linalg.norm(centroids[a] - centroids[b])
             for i, a in enumerate(groups) for b in groups[i + 1:]]
    intra = [np.linalg.norm(coords[tags == g] - centroids[g], axis=1).mean()
             for g in groups]
    return float(np.mean(inter) / np.mean(intra))


# ---------------------------------------------------------------------------
# Ablation comparison


def evaluate_corpus_split(model: Spotter, corpus: Corpus, split: str,
                          stats: dsp.ProsodyStats,
                          batch_size: int = 16) -> dict:
    features = corpus_features(corpus, split_indices(corpus, split))
    trials = [t for t, _ in prepare_trials(corpus, split, features, stats)]
    labels = np.array([t.label for t in trials])
    scores = np.empty(len(trials), dtype=np.float64)
    for start in range(0, len(trials), batch_size):
        chunk = trials[start:start + batch_size]
        scores[start:start + len(chunk)] = model.score_trials(chunk)
    return split_metrics(scores, labels)


def run_ablation(corpus: Corpus, train_cfg: TrainConfig, init_seed: int = 0,
                 variants=("none", "film", "lpro", "prosody"),
                 splits=("test_easy", "test_hard", "test_intent"),
                 out_path=None, on_step=None, model_config=None) -> dict:
    """Train every variant with identical seed/config; report deltas."""
    from .model import SpotterConfig
    if model_config is None:
        model_config = SpotterConfig(init_seed=init_seed)
    report = {"epochs": train_cfg.epochs, "init_seed": init_seed,
              "variants": {}, "deltas": {}}
    for variant in variants:
        model = Spotter(dataclasses.replace(model_config,
                                            init_seed=init_seed,
                                            ablation=variant))
        result = train_spotter(model, corpus, train_cfg, on_step=on_step)
        entry = {"steps": result.steps}
        for split in splits:
            entry[split] = evaluate_corpus_split(model, corpus, split,
                                                 result.stats)
        report["variants"][variant] = entry
    if "none" in report["variants"]:
        base = report["variants"]["none"]
        for variant in variants:
            if variant == "none":
                continue
            report["deltas"][variant] = {
                split: {
                    "auc": report["variants"][variant][split]["auc"]
                    - base[split]["auc"],
                    "eer": report["variants"][variant][split]["eer"]
                    - base[split]["eer"]}
                for split in splits}
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return report
