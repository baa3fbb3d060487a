"""Figure rendering for reports: histograms, ROC, sweep, projections.

Everything draws through the Agg backend straight to files so the
pipeline stays headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

INTENT_COLORS = {"neutral": "#4878cf", "imperative": "#d65f5f",
                 "interrogative": "#59a14f"}
ACCENT_MARKERS = {"A": "o", "B": "s", "C": "^", "D": "D"}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def score_histogram(scores, labels, path, title: str = "") -> None:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bins = np.linspace(0.0, 1.0, 31)
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="positive",
            color="#59a14f")
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="negative",
            color="#d65f5f")
    ax.set_xlabel("score")
    ax.set_ylabel("trials")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    _save(fig, path)


def _roc_points(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    thresholds = np.unique(scores)[::-1]
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        tpr.append(np.mean(pos >= t))
        fpr.append(np.mean(neg >= t))
    return np.array(fpr), np.array(tpr)


def roc_curves(split_scores: dict, path) -> None:
    """split_scores: {split: (scores, labels)}."""
    fig, ax = plt.subplots(figsize=(4.4, 4.2))
    for split, (scores, labels) in split_scores.items():
        fpr, tpr = _roc_points(scores, labels)
        ax.plot(fpr, tpr, label=split, linewidth=1.4)
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.9)
    ax.set_xlabel("false alarm rate")
    ax.set_ylabel("true accept rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def sweep_curve(alphas, scores, path, rho: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.plot(alphas, scores, marker="o", linewidth=1.4, color="#4878cf")
    ax.set_xlabel("interpolation coefficient")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    if rho is not None:
        ax.set_title(f"rank correlation {rho:+.2f}")
    _save(fig, path)


def embedding_scatter(coords, intents, accents, path) -> None:
    coords = np.asarray(coords)
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    seen = set()
    for i in range(coords.shape[0]):
        color = INTENT_COLORS.get(intents[i], "#555555")
        marker = ACCENT_MARKERS.get(accents[i], "x")
        label = intents[i] if intents[i] not in seen else None
        seen.add(intents[i])
        ax.scatter(coords[i, 0], coords[i, 1], c=color, marker=marker,
                   s=26, alpha=0.8, label=label, linewidths=0)
    ax.set_xlabel("first principal coordinate")
    ax.set_ylabel("second principal coordinate")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def training_curves(history, path) -> None:
    """history: iterable of StepRecord-like objects."""
    steps = [r.step for r in history]
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.2))
    axes[0].plot(steps, [r.loss for r in history], linewidth=1.0,
                 label="total", color="#4878cf")
    axes[0].plot(steps, [r.loss_utt for r in history], linewidth=1.0,
                 label="utterance", color="#d65f5f")
    axes[0].set_yscale("log")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False, fontsize=8)
    axes[1].plot(steps, [r.lr for r in history], linewidth=1.2,
                 color="#59a14f")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("learning rate")
    _save(fig, path)


def feature_panel(fbank, track, path) -> None:
    """Filterbank image over the prosody tracks of one utterance."""
    fbank = np.asarray(fbank)
    track = np.asarray(track)
    fig, axes = plt.subplots(3, 1, figsize=(7.2, 6.0), sharex=True)
    axes[0].imshow(fbank.T, origin="lower", aspect="auto",
                   interpolation="nearest", cmap="magma")
    axes[0].set_ylabel("mel band")
    frames = np.arange(track.shape[0])
    voiced = track[:, 0] > 0
    axes[1].plot(frames[voiced], track[voiced, 0], ".", markersize=3,
                 color="#4878cf")
    axes[1].set_ylabel("F0 (Hz)")
    axes[2].plot(frames, track[:, 2], linewidth=1.0, color="#59a14f",
                 label="energy")
    axes[2].plot(frames, track[:, 1], linewidth=1.0, color="#d65f5f",
                 label="aperiodicity")
    axes[2].set_xlabel("frame")
    axes[2].legend(frameon=False, fontsize=8)
    _save(fig, path)
