"""Text to phoneme ids over a small synthetic inventory.

The inventory is fixed: 8 vowels, 14 consonants, plus silence and unknown.
Words resolve through a lexicon first (plain text, one `word<TAB>ph ph ...`
entry per line); anything out of lexicon falls back to per-letter rules,
and characters with no rule map to the unknown symbol.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

VOWELS = ("aa", "ee", "ii", "oo", "uu", "ay", "ow", "eh")
CONSONANTS = ("p", "t", "k", "b", "d", "g", "f", "s", "sh", "z", "v",
              "m", "n", "r")
SILENCE = "sil"
UNKNOWN = "unk"


@dataclass(frozen=True)
class PhonemeInventory:
    symbols: tuple

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("inventory symbols must be unique")
        if SILENCE not in self.symbols or UNKNOWN not in self.symbols:
            raise ValueError("inventory must contain silence and unknown")

    def __len__(self):
        return len(self.symbols)

    def id_of(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise ValueError(f"symbol {symbol!r} not in inventory") from None

    def symbol_of(self, idx: int) -> str:
        return self.symbols[idx]

    def is_vowel(self, symbol: str) -> bool:
        return symbol in VOWELS

    @property
    def silence_id(self) -> int:
        return self.symbols.index(SILENCE)

    @property
    def unknown_id(self) -> int:
        return self.symbols.index(UNKNOWN)


def default_inventory() -> PhonemeInventory:
    return PhonemeInventory(symbols=VOWELS + CONSONANTS + (SILENCE, UNKNOWN))


@dataclass
class PhonemeSequence:
    symbols: tuple
    ids: np.ndarray

    def __len__(self):
        return len(self.symbols)


@dataclass
class Alignment:
    """Per-phoneme [start, end) frame spans on the subsampled grid."""
    segments: list

    def __len__(self):
        return len(self.segments)

    def validate(self, num_frames: int) -> None:
        prev_end = 0
        for i, (start, end) in enumerate(self.segments):
            if not (0 <= start < end):
                raise ValueError(
                    f"alignment segment {i} has empty or negative span "
                    f"[{start}, {end})")
            if start < prev_end:
                raise ValueError(
                    f"alignment segment {i} starting at {start} overlaps the "
                    f"previous one ending at {prev_end}")
            prev_end = end
        if prev_end > num_frames:
            raise ValueError(
                f"alignment ends at {prev_end}, past the {num_frames}-frame "
                f"feature grid")


# Per-letter fallback. Every ASCII letter maps somewhere sensible in the
# inventory; everything else becomes the unknown symbol.
LETTER_RULES = {
    "a": "aa", "b": "b", "c": "k", "d": "d", "e": "eh", "f": "f", "g": "g",
    "h": "f", "i": "ii", "j": "z", "k": "k", "l": "r", "m": "m", "n": "n",
    "o": "oo", "p": "p", "q": "k", "r": "r", "s": "s", "t": "t", "u": "uu",
    "v": "v", "w": "uu", "x": "s", "y": "ii", "z": "z",
}


def load_lexicon(path, inventory: PhonemeInventory | None = None) -> dict:
    """Parse `word<TAB>ph1 ph2 ...` lines; unknown symbols are an error."""
    inventory = inventory or default_inventory()
    lexicon: dict[str, tuple] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected word<TAB>phonemes")
        word, phones = line.split("\t", 1)
        symbols = tuple(phones.split())
        for s in symbols:
            if s not in inventory.symbols:
                raise ValueError(
                    f"{path}:{lineno}: symbol {s!r} not in inventory")
        lexicon[word.lower()] = symbols
    return lexicon


def default_lexicon() -> dict:
    with resources.as_file(
            resources.files("prosospot").joinpath("data/lexicon.txt")) as p:
        return load_lexicon(p)


def text_to_phonemes(text: str, lexicon: dict | None = None,
                     inventory: PhonemeInventory | None = None) -> PhonemeSequence:
    """Whole-word lexicon lookup with per-letter fallback."""
    inventory = inventory or default_inventory()
    if lexicon is None:
        lexicon = default_lexicon()
    words = text.lower().split()
    if not words:
        raise ValueError("cannot phonemize empty text")
    symbols: list[str] = []
    for word in words:
        if word in lexicon:
            symbols.extend(lexicon[word])
        else:
            symbols.extend(LETTER_RULES.get(ch, UNKNOWN) for ch in word)
    ids = np.array([inventory.id_of(s) for s in symbols], dtype=np.int64)
    return PhonemeSequence(symbols=tuple(symbols), ids=ids)


def make_embedding_table(rng: np.random.Generator, dim: int,
                         inventory: PhonemeInventory | None = None,
                         dtype=None):
    """Trainable [V, dim] table, uniform fan-based init."""
    from . import tensorcore as tc
    inventory = inventory or default_inventory()
    return tc.xavier_uniform(rng, (len(inventory), dim),
                             fan_in=len(inventory), fan_out=dim, dtype=dtype)


def embed_phonemes(table, seq: PhonemeSequence):
    """Rows of the table for one sequence; rows participate in gradients."""
    from . import tensorcore as tc
    return tc.embedding_lookup(table, seq.ids)
