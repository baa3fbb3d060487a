"""Synthetic prosody-controllable keyword corpus.

Every utterance lives on a fixed 2 s grid: 32000 samples, 198 feature
frames, 50 subsampled frames (1 subsampled frame = 4 feature frames =
640 samples).  A keyword is rendered as a run of phoneme segments between
one leading and one trailing silence segment; the alignment partitions
the subsampled grid exactly.

Phonemes are built from three spectral recipes: vowels are harmonic
stacks shaped by a two-formant envelope, voiced consonants are
low-harmonic buzz around a single resonance, and unvoiced consonants are
band-limited noise.  Voicing carries the intent contour, so F0 is a
controllable label rather than an emergent property.
"""

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .g2p import (Alignment, CONSONANTS, PhonemeSequence, SILENCE, VOWELS,
                  default_inventory)

# Timing grid. All durations below are in subsampled frames.
UTT_SECONDS = 2.0
UTT_SAMPLES = int(UTT_SECONDS * dsp.SAMPLE_RATE)   # 32000
SAMPLES_PER_SUBFRAME = 640                          # 4 feature hops
NUM_SUBFRAMES = UTT_SAMPLES // SAMPLES_PER_SUBFRAME  # 50
MIN_PHONEME_FRAMES = 2
MIN_SILENCE_FRAMES = 2

CROSSFADE_SAMPLES = 80          # 5 ms at 16 kHz
NOISE_FLOOR_DB = -40.0
F0_FLOOR_HZ = 80.0
F0_CEIL_HZ = 400.0
BASE_F0_RANGE_HZ = (140.0, 185.0)

VOWEL_RMS = 0.22
BUZZ_RMS = 0.16
NOISE_RMS = 0.11

INTENTS = ("neutral", "imperative", "interrogative")
ACCENTS = ("A", "B", "C", "D")

VOICED_CONSONANTS = ("b", "d", "g", "z", "v", "m", "n", "r")
UNVOICED_CONSONANTS = ("p", "t", "k", "f", "s", "sh")


@dataclass(frozen=True)
class PhonemeRecipe:
    """How one phoneme sounds: kind is 'vowel', 'buzz', or 'noise'.

    freqs holds (F1, F2) for vowels, (resonance,) for buzz, and
    (band_lo, band_hi) for noise.  Voiced fricatives add a weak noise
    band on top of the buzz.
    """
    kind: str
    freqs: tuple
    noise_band: tuple | None = None
    noise_gain: float = 0.0


VOWEL_FORMANTS = {
    "aa": (730.0, 1090.0),
    "ee": (430.0, 2000.0),
    "ii": (270.0, 2290.0),
    "oo": (570.0, 840.0),
    "uu": (300.0, 870.0),
    "ay": (700.0, 1550.0),
    "ow": (470.0, 1180.0),
    "eh": (610.0, 1900.0),
}

BUZZ_RESONANCES = {
    "b": 425.0, "d": 490.0, "g": 620.0,
    "m": 230.0, "n": 360.0, "r": 700.0,
    "z": 555.0, "v": 295.0,
}

# Noise bands are at least 1500 Hz wide and sit in the upper spectrum so
# they never masquerade as voicing.
NOISE_BANDS = {
    "p": (800.0, 2400.0),
    "t": (2800.0, 4800.0),
    "k": (1400.0, 3200.0),
    "f": (3200.0, 6400.0),
    "s": (4800.0, 7400.0),
    "sh": (1900.0, 3900.0),
}

FRICATIVE_OVERLAYS = {
    "z": ((3500.0, 6000.0), 0.45),
    "v": ((2500.0, 4500.0), 0.35),
}


def phoneme_recipe(symbol: str) -> PhonemeRecipe:
    if symbol in VOWEL_FORMANTS:
        return PhonemeRecipe(kind="vowel", freqs=VOWEL_FORMANTS[symbol])
    if symbol in NOISE_BANDS:
        return PhonemeRecipe(kind="noise", freqs=NOISE_BANDS[symbol])
    if symbol in BUZZ_RESONANCES:
        band, gain = FRICATIVE_OVERLAYS.get(symbol, (None, 0.0))
        return PhonemeRecipe(kind="buzz", freqs=(BUZZ_RESONANCES[symbol],),
                             noise_band=band, noise_gain=gain)
    raise ValueError(f"no spectral recipe for symbol {symbol!r}")


def is_voiced(symbol: str) -> bool:
    return symbol in VOWEL_FORMANTS or symbol in BUZZ_RESONANCES


class DurationError(ValueError):
    """Raised when a rendering cannot fit the 2 s utterance grid."""


class CorpusConfigError(ValueError):
    """Raised when a corpus configuration cannot satisfy its split rules."""


@dataclass(frozen=True)
class KeywordSpec:
    """A word, its phonemes, base durations, and per-phoneme recipes."""
    name: str
    phonemes: PhonemeSequence
    durations: tuple          # subsampled frames per phoneme, each >= 2
    recipes: tuple = field(compare=False, default=())

    def __post_init__(self):
        if len(self.durations) != len(self.phonemes):
            raise ValueError("one duration per phoneme required")
        if any(d < MIN_PHONEME_FRAMES for d in self.durations):
            raise ValueError(
                f"phoneme durations must be at least {MIN_PHONEME_FRAMES} "
                "subsampled frames")
        if not self.recipes:
            object.__setattr__(
                self, "recipes",
                tuple(phoneme_recipe(s) for s in self.phonemes.symbols))


@dataclass(frozen=True)
class AccentProfile:
    """Rate/range surrogate for a speaker group."""
    name: str
    vowel_scale: float
    voiced_scale: float
    unvoiced_scale: float
    f0_range_mult: float

    def duration_scale(self, symbol: str) -> float:
        if symbol in VOWEL_FORMANTS:
            return self.vowel_scale
        if symbol in BUZZ_RESONANCES:
            return self.voiced_scale
        return self.unvoiced_scale


ACCENT_PROFILES = {
    "A": AccentProfile("A", 1.00, 1.00, 1.00, 1.00),
    "B": AccentProfile("B", 1.25, 1.00, 0.90, 0.80),
    "C": AccentProfile("C", 0.85, 1.10, 1.15, 1.25),
    "D": AccentProfile("D", 1.10, 0.90, 1.05, 1.10),
}


@dataclass(frozen=True)
class ProsodyProfile:
    """Control inputs for one rendering: who, how, and at what pitch."""
    intent: str
    accent: str
    base_f0_hz: float

    def __post_init__(self):
        if self.intent not in INTENTS:
            raise ValueError(f"unknown intent {self.intent!r}")
        if self.accent not in ACCENTS:
            raise ValueError(f"unknown accent {self.accent!r}")
        if not (F0_FLOOR_HZ <= self.base_f0_hz <= F0_CEIL_HZ):
            raise ValueError(
                f"base F0 {self.base_f0_hz} outside "
                f"[{F0_FLOOR_HZ}, {F0_CEIL_HZ}] Hz")


@dataclass(frozen=True)
class SpeakerProfile:
    index: int
    base_f0_hz: float
    accent: str
    split: str                  # "train" or "test"


@dataclass(frozen=True)
class UtteranceSpec:
    """Everything needed to re-render one utterance deterministically."""
    index: int                 # global; seeds the per-utterance RNG
    word: str
    intent: str
    speaker: int


@dataclass(frozen=True)
class Trial:
    split: str
    label: int                 # 1 = query matches enrollment
    negative_kind: str         # none | easy | hard | intent_mismatch | accent_shift
    enrollment_text: str
    enroll: UtteranceSpec
    query: UtteranceSpec

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.label == 1 and self.negative_kind != "none":
            raise ValueError("positive trials must have negative_kind 'none'")
        if self.label == 0 and self.negative_kind == "none":
            raise ValueError("negative trials need a negative_kind")


NEGATIVE_KINDS = ("none", "easy", "hard", "intent_mismatch", "accent_shift")


# ---------------------------------------------------------------------------
# Vocabulary construction


def edit_distance(a, b) -> int:
    """Levenshtein distance over symbol tuples."""
    a, b = tuple(a), tuple(b)
    prev = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        cur = [i]
        for j, sb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (sa != sb)))
        prev = cur
    return prev[-1]


def phoneme_overlap(a, b) -> int:
    """Number of distinct symbols the two words share."""
    return len(set(a) & set(b))


def _word_name(symbols) -> str:
    # The inventory is prefix-unambiguous, so plain concatenation is a
    # collision-free name.
    return "".join(symbols)


def _draw_durations(symbols, rng) -> tuple:
    durs = []
    for s in symbols:
        if s in VOWEL_FORMANTS:
            durs.append(int(rng.integers(3, 6)))
        else:
            durs.append(int(rng.integers(2, 4)))
    return tuple(durs)


def _sequence(symbols, inventory) -> PhonemeSequence:
    ids = np.array([inventory.id_of(s) for s in symbols], dtype=np.int64)
    return PhonemeSequence(symbols=tuple(symbols), ids=ids)


def _draw_word(rng, inventory) -> KeywordSpec:
    length = int(rng.integers(3, 7))
    symbols = []
    for pos in range(length):
        pool = CONSONANTS if pos % 2 == 0 else VOWELS
        symbols.append(pool[int(rng.integers(0, len(pool)))])
    return KeywordSpec(name=_word_name(symbols),
                       phonemes=_sequence(symbols, inventory),
                       durations=_draw_durations(symbols, rng))


@dataclass(frozen=True)
class Vocabulary:
    anchors: tuple             # KeywordSpec, the enrollment keywords
    hard: dict                 # anchor name -> tuple of KeywordSpec
    easy: dict                 # anchor name -> tuple of KeywordSpec
    words: dict                # every word name -> KeywordSpec

    @property
    def lexicon(self) -> dict:
        return {name: list(spec.phonemes.symbols)
                for name, spec in self.words.items()}

    def num_pairings(self) -> int:
        return sum(len(self.hard[a.name]) + len(self.easy[a.name])
                   for a in self.anchors)


MAX_DRAWS = 10000


def build_lexicon_and_keywords(n_keywords: int = 20,
                               rng: np.random.Generator | None = None,
                               n_hard: int = 3,
                               n_easy: int = 3) -> Vocabulary:
    """Draw anchors plus per-anchor hard and easy confusion words.

    Hard negatives differ from their anchor by exactly one same-class
    substitution (edit distance 1); easy negatives share at most one
    distinct phoneme with their anchor.  Name collisions are resolved by
    drawing again.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_keywords < 2:
        raise CorpusConfigError("need at least 2 keywords")
    inventory = default_inventory()
    words: dict = {}
    anchors = []
    draws = 0
    while len(anchors) < n_keywords:
        draws += 1
        if draws > MAX_DRAWS:
            raise RuntimeError("vocabulary draw budget exhausted")
        cand = _draw_word(rng, inventory)
        if cand.name in words:
            continue
        words[cand.name] = cand
        anchors.append(cand)

    hard: dict = {}
    easy: dict = {}
    for anchor in anchors:
        got: list = []
        draws = 0
        while len(got) < n_hard:
            draws += 1
            if draws > MAX_DRAWS:
                raise RuntimeError("hard-negative draw budget exhausted")
            pos = int(rng.integers(0, len(anchor.phonemes)))
            old = anchor.phonemes.symbols[pos]
            pool = VOWELS if old in VOWEL_FORMANTS else CONSONANTS
            new = pool[int(rng.integers(0, len(pool)))]
            if new == old:
                continue
            symbols = list(anchor.phonemes.symbols)
            symbols[pos] = new
            name = _word_name(symbols)
            if name in words:
                continue
            spec = KeywordSpec(name=name,
                               phonemes=_sequence(symbols, inventory),
                               durations=anchor.durations)
            assert edit_distance(anchor.phonemes.symbols, symbols) == 1
            words[name] = spec
            got.append(spec)
        hard[anchor.name] = tuple(got)

        got = []
        draws = 0
        while len(got) < n_easy:
            draws += 1
            if draws > MAX_DRAWS:
                raise RuntimeError("easy-negative draw budget exhausted")
            cand = _draw_word(rng, inventory)
            if cand.name in words:
                continue
            if phoneme_overlap(anchor.phonemes.symbols,
                               cand.phonemes.symbols) > 1:
                continue
            words[cand.name] = cand
            got.append(cand)
        easy[anchor.name] = tuple(got)

    return Vocabulary(anchors=tuple(anchors), hard=hard, easy=easy,
                      words=words)


# ---------------------------------------------------------------------------
# Speakers


def make_speakers(n_speakers: int, master_seed: int) -> tuple:
    """Fixed speaker table: base pitch, accent, and train/test split."""
    if n_speakers < 6:
        raise CorpusConfigError("need at least 6 speakers for disjoint splits")
    rng = np.random.default_rng(np.random.SeedSequence(
        (master_seed, _SPEAKER_STREAM)))
    lo, hi = BASE_F0_RANGE_HZ
    bases = rng.uniform(lo, hi, size=n_speakers)
    n_train = int(round(n_speakers * 2 / 3))
    speakers = tuple(
        SpeakerProfile(index=i, base_f0_hz=float(bases[i]),
                       accent=ACCENTS[i % len(ACCENTS)],
                       split="train" if i < n_train else "test")
        for i in range(n_speakers))
    test_accents = {s.accent for s in speakers if s.split == "test"}
    if len([s for s in speakers if s.split == "test"]) < 2 or \
            len(test_accents) < 2:
        raise CorpusConfigError(
            "test split needs at least two speakers with distinct accents")
    return speakers


# ---------------------------------------------------------------------------
# Waveform synthesis


def intent_contour(profile: ProsodyProfile, rel: np.ndarray,
                   jitter: tuple | None = None) -> np.ndarray:
    """Commanded F0 at relative keyword positions rel in [0, 1].

    neutral: flat with a slow wobble of at most +-5 Hz; imperative:
    linear fall from base+50 to base-50; interrogative: low shallow fall
    from base-5 to base-25 over the first 60 percent then a rise to
    base+85 over the final 40 percent.  Contour swing deliberately
    exceeds the speaker base spread so intent dominates the normalized
    F0 channel.  Accent scales the excursion around the base, and the
    result is clamped to [80, 400] Hz.
    """
    base = profile.base_f0_hz
    rel = np.clip(np.asarray(rel, dtype=np.float64), 0.0, 1.0)
    if profile.intent == "imperative":
        raw = base + 50.0 - 100.0 * rel
    elif profile.intent == "interrogative":
        head = base - 5.0 - 20.0 * (rel / 0.6)
        tail = base - 25.0 + 110.0 * ((rel - 0.6) / 0.4)
        raw = np.where(rel <= 0.6, head, tail)
    else:
        amp, cycles, phase = jitter if jitter is not None else (0.0, 1.0, 0.0)
        raw = base + amp * np.sin(2.0 * np.pi * cycles * rel + phase)
    mult = ACCENT_PROFILES[profile.accent].f0_range_mult
    return np.clip(base + mult * (raw - base), F0_FLOOR_HZ, F0_CEIL_HZ)


def _band_noise(rng: np.random.Generator, n: int, lo: float,
                hi: float) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / dsp.SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n)


def _rms_normalize(sig: np.ndarray, target: float) -> np.ndarray:
    rms = float(np.sqrt(np.mean(sig * sig)))
    return sig * (target / rms) if rms > 0 else sig


def _segment_envelope(n: int) -> np.ndarray:
    ramp = min(CROSSFADE_SAMPLES, n // 3)
    env = np.ones(n)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = edge
        env[-ramp:] = edge[::-1]
    return env


def _vowel_amplitudes(harmonics: np.ndarray, f0_mean: float,
                      formants: tuple) -> np.ndarray:
    f1, f2 = formants
    freqs = harmonics * f0_mean
    amps = (1.0 / np.sqrt(harmonics)) * (
        0.08
        + 1.0 * np.exp(-((freqs - f1) ** 2) / (2.0 * 170.0 ** 2))
        + 0.8 * np.exp(-((freqs - f2) ** 2) / (2.0 * 250.0 ** 2)))
    amps[0] = 1.0      # strong fundamental keeps voicing unambiguous
    return amps


BUZZ_BASE_AMPS = np.array([1.0, 0.5, 0.25, 0.12, 0.06])


def _buzz_amplitudes(harmonics: np.ndarray, f0_mean: float,
                     resonance: float) -> np.ndarray:
    freqs = harmonics * f0_mean
    gain = 1.0 + 2.2 * np.exp(-((freqs - resonance) ** 2) / (2.0 * 110.0 ** 2))
    return BUZZ_BASE_AMPS[:len(harmonics)] * gain


def scaled_durations(spec: KeywordSpec, accent: AccentProfile) -> tuple:
    return tuple(
        max(MIN_PHONEME_FRAMES, int(round(d * accent.duration_scale(s))))
        for s, d in zip(spec.phonemes.symbols, spec.durations))


@dataclass
class SynthesizedUtterance:
    """One rendered utterance plus the labels synthesis controlled."""
    waveform: dsp.Waveform
    alignment: Alignment       # full partition of [0, NUM_SUBFRAMES)
    phonemes: PhonemeSequence  # silence + keyword phonemes + silence
    f0_frames: np.ndarray      # commanded F0 at feature-frame centers [198]
    voiced_frames: np.ndarray  # bool [198]: window fully inside voicing
    vowel_frames: np.ndarray   # bool [198]: window fully inside a vowel

    @property
    def keyword_segments(self) -> list:
        return self.alignment.segments[1:-1]


def synth_utterance(spec: KeywordSpec, profile: ProsodyProfile,
                    seed) -> SynthesizedUtterance:
    """Render one keyword utterance on the 2 s grid.

    seed may be an int or a numpy SeedSequence; every random choice
    (lead silence, neutral jitter, noise) comes from it, so equal
    arguments give bitwise-equal waveforms.
    """
    rng = np.random.default_rng(seed)
    accent = ACCENT_PROFILES[profile.accent]
    durs = scaled_durations(spec, accent)
    total = sum(durs)
    lead = int(rng.integers(MIN_SILENCE_FRAMES, MIN_SILENCE_FRAMES + 3))
    trail = NUM_SUBFRAMES - lead - total
    if trail < MIN_SILENCE_FRAMES:
        raise DurationError(
            f"keyword {spec.name!r} needs {total} subsampled frames plus "
            f"silence and does not fit the {NUM_SUBFRAMES}-frame grid")

    segments = [(0, lead)]
    cursor = lead
    for d in durs:
        segments.append((cursor, cursor + d))
        cursor += d
    segments.append((cursor, NUM_SUBFRAMES))
    alignment = Alignment(segments=segments)
    alignment.validate(NUM_SUBFRAMES)

    inventory = default_inventory()
    full_symbols = (SILENCE,) + spec.phonemes.symbols + (SILENCE,)
    phonemes = _sequence(full_symbols, inventory)

    jitter = (float(rng.uniform(2.0, 5.0)), float(rng.uniform(1.0, 2.5)),
              float(rng.uniform(0.0, 2.0 * np.pi)))
    k0 = lead * SAMPLES_PER_SUBFRAME
    k1 = (lead + total) * SAMPLES_PER_SUBFRAME
    rel = (np.arange(UTT_SAMPLES, dtype=np.float64) - k0) / (k1 - k0)
    f0 = intent_contour(profile, rel, jitter=jitter)
    phase = 2.0 * np.pi * np.cumsum(f0) / dsp.SAMPLE_RATE

    wave = np.zeros(UTT_SAMPLES)
    for (s_frame, e_frame), symbol, recipe in zip(
            segments[1:-1], spec.phonemes.symbols, spec.recipes):
        s = s_frame * SAMPLES_PER_SUBFRAME
        e = e_frame * SAMPLES_PER_SUBFRAME
        n = e - s
        if recipe.kind == "noise":
            sig = _rms_normalize(
                _band_noise(rng, n, recipe.freqs[0], recipe.freqs[1]),
                NOISE_RMS)
        else:
            f0_mean = float(f0[s:e].mean())
            peak_f0 = float(f0[s:e].max())
            if recipe.kind == "vowel":
                h_max = max(3, min(24, int(7600.0 / peak_f0)))
                harmonics = np.arange(1, h_max + 1, dtype=np.float64)
                amps = _vowel_amplitudes(harmonics, f0_mean, recipe.freqs)
                target = VOWEL_RMS
            else:
                h_max = min(len(BUZZ_BASE_AMPS),
                            max(3, int(7600.0 / peak_f0)))
                harmonics = np.arange(1, h_max + 1, dtype=np.float64)
                amps = _buzz_amplitudes(harmonics, f0_mean, recipe.freqs[0])
                target = BUZZ_RMS
            sig = (amps[:, None] * np.sin(harmonics[:, None] * phase[None,
                                                                     s:e])
                   ).sum(axis=0)
            sig = _rms_normalize(sig, target)
            if recipe.noise_band is not None:
                overlay = _rms_normalize(
                    _band_noise(rng, n, *recipe.noise_band),
                    recipe.noise_gain * target)
                sig = sig + overlay
        wave[s:e] = sig * _segment_envelope(n)

    floor_std = VOWEL_RMS * 10.0 ** (NOISE_FLOOR_DB / 20.0)
    wave = wave + rng.normal(0.0, floor_std, UTT_SAMPLES)
    wave = np.clip(wave, -0.999, 0.999)

    t_frames = dsp.num_frames(UTT_SAMPLES)
    centers = dsp.HOP_LENGTH * np.arange(t_frames) + dsp.WIN_LENGTH // 2
    f0_frames = f0[centers].astype(np.float64)
    voiced = np.zeros(t_frames, dtype=bool)
    vowel = np.zeros(t_frames, dtype=bool)
    starts = dsp.HOP_LENGTH * np.arange(t_frames)
    for (s_frame, e_frame), symbol in zip(segments[1:-1],
                                          spec.phonemes.symbols):
        if not is_voiced(symbol):
            continue
        s = s_frame * SAMPLES_PER_SUBFRAME
        e = e_frame * SAMPLES_PER_SUBFRAME
        inside = (starts >= s) & (starts + dsp.WIN_LENGTH <= e)
        voiced |= inside
        if symbol in VOWEL_FORMANTS:
            vowel |= inside

    return SynthesizedUtterance(
        waveform=dsp.Waveform(samples=wave, sample_rate=dsp.SAMPLE_RATE),
        alignment=alignment, phonemes=phonemes, f0_frames=f0_frames,
        voiced_frames=voiced, vowel_frames=vowel)


# ---------------------------------------------------------------------------
# Trials and corpus assembly

_SPEAKER_STREAM = 2 ** 32
_VOCAB_STREAM = 2 ** 32 + 1
_TRIAL_STREAM = 2 ** 32 + 2


@dataclass(frozen=True)
class CorpusConfig:
    master_seed: int = 42
    n_keywords: int = 20
    n_speakers: int = 12
    n_hard_per_keyword: int = 3
    n_easy_per_keyword: int = 3
    n_train_trials: int = 240
    n_dev_trials: int = 48
    n_test_easy: int = 96
    n_test_hard: int = 96
    n_test_intent: int = 64
    n_test_accent: int = 64

    def __post_init__(self):
        counts = (self.n_train_trials, self.n_dev_trials, self.n_test_easy,
                  self.n_test_hard, self.n_test_intent, self.n_test_accent)
        if any(c <= 0 or c % 2 for c in counts):
            raise CorpusConfigError("trial counts must be positive and even")
        if self.n_keywords < 2:
            raise CorpusConfigError("need at least 2 keywords")
        if self.n_hard_per_keyword < 1 or self.n_easy_per_keyword < 1:
            raise CorpusConfigError("each anchor needs confusion words")


SPLIT_NAMES = ("train", "dev", "test_easy", "test_hard", "test_intent",
               "test_accent")


class _IndexCounter:
    def __init__(self):
        self.value = 0

    def take(self) -> int:
        idx = self.value
        self.value += 1
        return idx


def _choice(rng, items):
    return items[int(rng.integers(0, len(items)))]


def _other_intent(rng, intent):
    options = [i for i in INTENTS if i != intent]
    return _choice(rng, options)


def build_trials(vocab: Vocabulary, speakers: tuple,
                 cfg: CorpusConfig, rng: np.random.Generator) -> dict:
    """Assemble train/dev and four diagnostic test splits.

    Train and dev draw from train speakers, test splits from test
    speakers; labels are balanced 50/50 in every split and train
    negatives cycle easy/hard/intent_mismatch.
    """
    train_speakers = [s for s in speakers if s.split == "train"]
    test_speakers = [s for s in speakers if s.split == "test"]
    if not train_speakers or len(test_speakers) < 2:
        raise CorpusConfigError("speaker table lacks disjoint splits")
    anchors = list(vocab.anchors)
    counter = _IndexCounter()
    trials: dict = {name: [] for name in SPLIT_NAMES}

    def spec_for(word, intent, speaker) -> UtteranceSpec:
        return UtteranceSpec(index=counter.take(), word=word,
                             intent=intent, speaker=speaker.index)

    def paired_split(name, count, speaker_pool, kinds):
        kind_cursor = 0
        for i in range(count):
            anchor = _choice(rng, anchors)
            intent = _choice(rng, INTENTS)
            speaker = _choice(rng, speaker_pool)
            if i % 2 == 0:
                trials[name].append(Trial(
                    split=name, label=1, negative_kind="none",
                    enrollment_text=anchor.name,
                    enroll=spec_for(anchor.name, intent, speaker),
                    query=spec_for(anchor.name, intent, speaker)))
                continue
            kind = kinds[kind_cursor % len(kinds)]
            kind_cursor += 1
            if kind == "easy":
                word = _choice(rng, vocab.easy[anchor.name]).name
                q_intent, q_speaker = intent, speaker
            elif kind == "hard":
                word = _choice(rng, vocab.hard[anchor.name]).name
                q_intent, q_speaker = intent, speaker
            else:       # intent_mismatch
                word = anchor.name
                q_intent, q_speaker = _other_intent(rng, intent), speaker
            trials[name].append(Trial(
                split=name, label=0, negative_kind=kind,
                enrollment_text=anchor.name,
                enroll=spec_for(anchor.name, intent, speaker),
                query=spec_for(word, q_intent, q_speaker)))

    paired_split("train", cfg.n_train_trials, train_speakers,
                 ("easy", "hard", "intent_mismatch"))
    paired_split("dev", cfg.n_dev_trials, train_speakers,
                 ("easy", "hard", "intent_mismatch"))
    paired_split("test_easy", cfg.n_test_easy, test_speakers, ("easy",))
    paired_split("test_hard", cfg.n_test_hard, test_speakers, ("hard",))

    # Intent split: consecutive trials share one enrollment rendering so
    # the pair doubles as a (same-intent, cross-intent) triple.
    for _ in range(cfg.n_test_intent // 2):
        anchor = _choice(rng, anchors)
        intent = _choice(rng, INTENTS)
        speaker = _choice(rng, test_speakers)
        enroll = spec_for(anchor.name, intent, speaker)
        trials["test_intent"].append(Trial(
            split="test_intent", label=1, negative_kind="none",
            enrollment_text=anchor.name, enroll=enroll,
            query=spec_for(anchor.name, intent, speaker)))
        trials["test_intent"].append(Trial(
            split="test_intent", label=0, negative_kind="intent_mismatch",
            enrollment_text=anchor.name, enroll=enroll,
            query=spec_for(anchor.name, _other_intent(rng, intent),
                           speaker)))

    # Accent split: positives cross speakers with different accents;
    # negatives are hard confusions rendered with an accent shift too.
    accent_pairs = [(a, b) for a in test_speakers for b in test_speakers
                    if a.index != b.index and a.accent != b.accent]
    if not accent_pairs:
        raise CorpusConfigError(
            "accent split needs test speakers with distinct accents")
    for i in range(cfg.n_test_accent):
        anchor = _choice(rng, anchors)
        intent = _choice(rng, INTENTS)
        s_enroll, s_query = _choice(rng, accent_pairs)
        if i % 2 == 0:
            trials["test_accent"].append(Trial(
                split="test_accent", label=1, negative_kind="none",
                enrollment_text=anchor.name,
                enroll=spec_for(anchor.name, intent, s_enroll),
                query=spec_for(anchor.name, intent, s_query)))
        else:
            word = _choice(rng, vocab.hard[anchor.name]).name
            trials["test_accent"].append(Trial(
                split="test_accent", label=0, negative_kind="accent_shift",
                enrollment_text=anchor.name,
                enroll=spec_for(anchor.name, intent, s_enroll),
                query=spec_for(word, intent, s_query)))

    return trials


@dataclass
class Corpus:
    config: CorpusConfig
    vocab: Vocabulary
    speakers: tuple
    trials: dict

    def utterance_specs(self) -> list:
        seen = {}
        for split in SPLIT_NAMES:
            for trial in self.trials[split]:
                for u in (trial.enroll, trial.query):
                    seen[u.index] = u
        return [seen[i] for i in sorted(seen)]

    def speaker_of(self, spec: UtteranceSpec) -> SpeakerProfile:
        return self.speakers[spec.speaker]

    def profile_of(self, spec: UtteranceSpec) -> ProsodyProfile:
        speaker = self.speakers[spec.speaker]
        return ProsodyProfile(intent=spec.intent, accent=speaker.accent,
                              base_f0_hz=speaker.base_f0_hz)

    def realize(self, spec: UtteranceSpec) -> SynthesizedUtterance:
        """Render one utterance; a pure function of config and spec."""
        seed = np.random.SeedSequence((self.config.master_seed, spec.index))
        return synth_utterance(self.vocab.words[spec.word],
                               self.profile_of(spec), seed)


def build_corpus(cfg: CorpusConfig) -> Corpus:
    vocab = build_lexicon_and_keywords(
        cfg.n_keywords,
        np.random.default_rng(np.random.SeedSequence(
            (cfg.master_seed, _VOCAB_STREAM))),
        n_hard=cfg.n_hard_per_keyword, n_easy=cfg.n_easy_per_keyword)
    speakers = make_speakers(cfg.n_speakers, cfg.master_seed)
    trials = build_trials(
        vocab, speakers, cfg,
        np.random.default_rng(np.random.SeedSequence(
            (cfg.master_seed, _TRIAL_STREAM))))
    return Corpus(config=cfg, vocab=vocab, speakers=speakers, trials=trials)


# ---------------------------------------------------------------------------
# Manifest writing and loading


def _utterance_record(corpus: Corpus, spec: UtteranceSpec,
                      rendered: SynthesizedUtterance, wav_name: str) -> dict:
    speaker = corpus.speaker_of(spec)
    return {
        "index": spec.index,
        "wav": wav_name,
        "word": spec.word,
        "phonemes": list(rendered.phonemes.symbols),
        "alignment": [[int(s), int(e)] for s, e in
                      rendered.alignment.segments],
        "intent": spec.intent,
        "speaker": spec.speaker,
        "accent": speaker.accent,
        "base_f0_hz": speaker.base_f0_hz,
    }


def write_corpus(corpus: Corpus, out_dir, workers: int = 1) -> dict:
    """Render every utterance to wavs/ and trials to manifest.jsonl.

    Returns {"manifest": path, "config": path, "wav_dir": path}.  The
    manifest holds one trial per line with both utterance records
    embedded; config.json carries the generator settings, lexicon, and
    speaker table needed to interpret it.  `workers` > 1 renders
    utterances on a thread pool; each utterance is seeded independently
    so the files and manifest are identical to a serial run.
    """
    out = Path(out_dir)
    wav_dir = out / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)

    specs = list(corpus.utterance_specs())

    def _render(spec):
        utt = corpus.realize(spec)
        name = f"wavs/utt{spec.index:05d}.wav"
        dsp.write_wav(out / name, utt.waveform)
        return spec.index, _utterance_record(corpus, spec, utt, name)

    rendered: dict = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index, record in pool.map(_render, specs):
                rendered[index] = record
    else:
        for spec in specs:
            index, record = _render(spec)
            rendered[index] = record

    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for split in SPLIT_NAMES:
            for t in corpus.trials[split]:
                line = {
                    "split": t.split,
                    "label": t.label,
                    "negative_kind": t.negative_kind,
                    "enrollment_text": t.enrollment_text,
                    "enroll": rendered[t.enroll.index],
                    "query": rendered[t.query.index],
                }
                fh.write(json.dumps(line, sort_keys=True) + "\n")

    config_path = out / "config.json"
    payload = {
        "config": dataclasses.asdict(corpus.config),
        "lexicon": corpus.vocab.lexicon,
        "anchors": [a.name for a in corpus.vocab.anchors],
        "speakers": [dataclasses.asdict(s) for s in corpus.speakers],
    }
    with open(config_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return {"manifest": manifest_path, "config": config_path,
            "wav_dir": wav_dir}


def load_manifest(path) -> list:
    """Read manifest.jsonl back into a list of trial dicts."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            for key in ("split", "label", "negative_kind", "enroll",
                        "query"):
                if key not in rec:
                    raise ValueError(
                        f"{path}:{lineno}: trial record missing {key!r}")
            records.append(rec)
    return records
