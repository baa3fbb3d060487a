"""Audio front-end: log-mel filterbank energies and a three-channel
prosody track (F0, aperiodicity, frame energy) on a shared frame grid.

All analysis runs at 16 kHz with 25 ms windows hopped by 10 ms.  The pitch
tracker is a per-lag energy-normalized autocorrelation (computed via FFT)
with a hard voicing threshold: frames whose best peak falls below the
threshold are fully aperiodic (F0 = 0, aperiodicity = 1), which makes
digital silence come out as the row (0, 1, 0) after energy normalization.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WIN_LENGTH = 400          # 25 ms
HOP_LENGTH = 160          # 10 ms
N_FFT = 512
N_MELS = 80
FMIN_HZ = 20.0
FMAX_HZ = 7600.0
LOG_FLOOR = 1e-10

F0_MIN_HZ = 60.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.5
PEAK_BAND = 0.06           # period-multiple tie band after interpolation


@dataclass
class Waveform:
    """Mono float samples in [-1, 1] at a fixed rate."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FbankFeatures:
    """Log-mel energies, one row per frame."""
    values: np.ndarray  # [T, N_MELS] float32
    hop_seconds: float = HOP_LENGTH / SAMPLE_RATE

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class ProsodyTrack:
    """Raw per-frame (f0_hz, aperiodicity, energy) columns."""
    values: np.ndarray  # [T, 3] float32

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class ProsodyStats:
    """Per-channel standardization constants from a training corpus.

    The F0 channel's stats live in the log(1 + f0) domain and only count
    voiced frames.  Channels with (near) zero spread get std 1.
    """
    mean: np.ndarray
    std: np.ndarray
    degenerate: list = field(default_factory=list)

    def to_arrays(self) -> dict:
        return {"prosody_stats.mean": self.mean.astype(np.float32),
                "prosody_stats.std": self.std.astype(np.float32)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ProsodyStats":
        return cls(mean=np.asarray(arrays["prosody_stats.mean"], dtype=np.float64),
                   std=np.asarray(arrays["prosody_stats.std"], dtype=np.float64))


def _check_wave(wav: Waveform) -> np.ndarray:
    if wav.sample_rate != SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {wav.sample_rate}; "
                         f"this front-end is fixed at {SAMPLE_RATE} Hz")
    x = wav.samples
    if len(x) < WIN_LENGTH:
        raise ValueError(f"waveform of {len(x)} samples is shorter than one "
                         f"{WIN_LENGTH}-sample analysis window")
    return x


def num_frames(n_samples: int) -> int:
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def _frames(x: np.ndarray) -> np.ndarray:
    t = num_frames(len(x))
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(t)[:, None]
    return x[idx]


def hann_window(n: int = WIN_LENGTH) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank() -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters [N_MELS, N_FFT//2+1] and their center frequencies.

    Edges are equally spaced on the mel scale between FMIN_HZ and FMAX_HZ;
    triangles are evaluated at the FFT bin frequencies with unit peak.
    """
    edges_hz = hz_from_mel(np.linspace(mel_from_hz(FMIN_HZ), mel_from_hz(FMAX_HZ),
                                       N_MELS + 2))
    bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    lo, center, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lo) / (center - lo)
    falling = (hi - bin_hz[None, :]) / (hi - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges_hz[1:-1]


_MEL_WEIGHTS, MEL_CENTERS_HZ = mel_filterbank()


def compute_fbank(wav: Waveform) -> FbankFeatures:
    """Hann window, power spectrum (FFT size 512), mel filters, natural log.

    Using the power spectrum means scaling the waveform by c shifts every
    un-floored output value by exactly 2*log(c).
    """
    x = _check_wave(wav)
    frames = _frames(x) * hann_window()
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = power @ _MEL_WEIGHTS.T
    out = np.log(np.maximum(mel, LOG_FLOOR))
    return FbankFeatures(values=out.astype(np.float32))


def estimate_f0(wav: Waveform) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (f0_hz, periodicity) via normalized autocorrelation.

    Each lag's raw autocorrelation is normalized by the energies of the two
    segments it overlaps.  Candidate periods are the interpolated local
    maxima on lags inside [rate/F0_MAX, rate/F0_MIN]; the shortest lag
    within PEAK_BAND of the best decides.  At or above VOICING_THRESHOLD
    the frame is voiced with f0 = rate / lag and periodicity = the chosen
    peak height (clipped into [0, 1]); below it, f0 = 0 and periodicity = 0.
    """
    x = _check_wave(wav)
    frames = _frames(x)
    t = frames.shape[0]
    lag_min = int(np.ceil(SAMPLE_RATE / F0_MAX_HZ))
    lag_max = int(np.floor(SAMPLE_RATE / F0_MIN_HZ))
    nfft = 1024
    assert nfft >= WIN_LENGTH + lag_max

    spec = np.fft.rfft(frames, n=nfft, axis=1)
    raw = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, :lag_max + 1]

    sq = np.cumsum(frames * frames, axis=1)
    total = sq[:, -1:]
    lags = np.arange(lag_max + 1)
    head = sq[:, WIN_LENGTH - 1 - lags]            # energy of x[0 : N-lag]
    tail = total - np.concatenate(
        [np.zeros((t, 1)), sq[:, lags[1:] - 1]], axis=1)  # energy of x[lag : N]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 1e-12, raw / np.maximum(denom, 1e-12), 0.0)

    # A periodic frame correlates (near-)equally at every multiple of its
    # period, but each multiple lands on an integer lag with up to half a
    # sample of rounding, and the rounding loss grows with harmonic
    # content, so the raw argmax can fall on 2T instead of T.  Parabolic
    # interpolation through each local maximum removes almost all of that
    # loss; every interpolated local maximum within PEAK_BAND of the
    # global one is then the same peak, and the shortest such lag is the
    # fundamental.  The fractional offset also refines f0 below the
    # integer-lag grid.
    is_peak = np.ones_like(rho, dtype=bool)
    is_peak[:, 1:] &= rho[:, 1:] >= rho[:, :-1]
    is_peak[:, :-1] &= rho[:, :-1] >= rho[:, 1:]
    delta = np.zeros_like(rho)
    height = rho.copy()
    ym, y0, yp = rho[:, :-2], rho[:, 1:-1], rho[:, 2:]
    curv = ym - 2.0 * y0 + yp
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(np.abs(curv) > 1e-12, 0.5 * (ym - yp) / curv, 0.0)
    d = np.clip(d, -0.5, 0.5)
    delta[:, 1:-1] = d
    height[:, 1:-1] = y0 - 0.25 * (ym - yp) * d

    window = height[:, lag_min:lag_max + 1]
    window_peaks = np.where(is_peak[:, lag_min:lag_max + 1], window, -np.inf)
    peak = window_peaks.max(axis=1)
    candidate = window_peaks >= peak[:, None] - PEAK_BAND
    has_candidate = candidate.any(axis=1)
    best = np.where(has_candidate, np.argmax(candidate, axis=1),
                    np.argmax(window, axis=1))
    rows = np.arange(t)
    chosen = window[rows, best]
    frac_lag = lag_min + best + delta[rows, lag_min + best]
    voiced = np.maximum(peak, window.max(axis=1)) >= VOICING_THRESHOLD
    f0 = np.where(voiced, SAMPLE_RATE / frac_lag, 0.0)
    periodicity = np.where(voiced, np.clip(chosen, 0.0, 1.0), 0.0)
    return f0, periodicity


def frame_energy(wav: Waveform) -> np.ndarray:
    """Per-frame RMS of Hann-windowed samples, max-normalized per utterance."""
    x = _check_wave(wav)
    frames = _frames(x) * hann_window()
    rms = np.sqrt((frames * frames).mean(axis=1))
    top = rms.max()
    return rms / top if top > 0 else rms


def compute_prosody(wav: Waveform) -> ProsodyTrack:
    """Stack (f0, 1 - periodicity, normalized energy) on the fbank grid."""
    f0, periodicity = estimate_f0(wav)
    energy = frame_energy(wav)
    values = np.stack([f0, 1.0 - periodicity, energy], axis=1)
    return ProsodyTrack(values=values.astype(np.float32))


def compute_prosody_stats(tracks) -> ProsodyStats:
    """Per-channel mean/std over a training corpus of raw prosody tracks.

    F0 statistics are taken over voiced frames only, in log(1 + f0).
    A channel whose spread collapses gets std 1 and a warning.
    """
    stacked = np.concatenate([np.asarray(t.values, dtype=np.float64)
                              for t in tracks], axis=0)
    mean = np.zeros(3)
    std = np.ones(3)
    degenerate = []

    voiced = stacked[:, 0] > 0
    log_f0 = np.log1p(stacked[voiced, 0])
    channels = [("f0", log_f0), ("aperiodicity", stacked[:, 1]),
                ("energy", stacked[:, 2])]
    for i, (name, col) in enumerate(channels):
        if col.size == 0:
            degenerate.append(name)
            continue
        mean[i] = col.mean()
        s = col.std()
        if s < 1e-8:
            degenerate.append(name)
            s = 1.0
        std[i] = s
    for name in degenerate:
        logger.warning("prosody channel %r has no spread; std forced to 1", name)
    return ProsodyStats(mean=mean, std=std, degenerate=degenerate)


def normalize_prosody(track: ProsodyTrack, stats: ProsodyStats) -> np.ndarray:
    """Standardized [T, 3] float32; unvoiced frames keep 0 in the F0 column."""
    raw = np.asarray(track.values, dtype=np.float64)
    out = np.empty_like(raw)
    voiced = raw[:, 0] > 0
    out[:, 0] = np.where(voiced,
                         (np.log1p(raw[:, 0]) - stats.mean[0]) / stats.std[0],
                         0.0)
    out[:, 1] = (raw[:, 1] - stats.mean[1]) / stats.std[1]
    out[:, 2] = (raw[:, 2] - stats.mean[2]) / stats.std[2]
    if not np.all(np.isfinite(out)):
        raise ValueError("normalized prosody contains non-finite values")
    return out.astype(np.float32)


def write_wav(path, wav: Waveform) -> None:
    """16-bit little-endian PCM RIFF, mono."""
    pcm = np.clip(np.round(wav.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = fh.getframerate()
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return Waveform(samples=pcm.astype(np.float64) / 32767.0, sample_rate=rate)
