"""Phoneme symbol table and pronunciation lexicon.

Symbol-table file: one symbol per line, line number = phoneme id, exactly
72 lines.  Lexicon file: ``WORD PH1 PH2 ...`` per line (whitespace
separated, ``#`` comments allowed); words are matched case-insensitively.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..alignment import N_PHONES
from ..errors import ValidationError

_VOWELS = ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"]
_CONSONANTS = ["B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S",
               "SH", "T", "TH", "V", "W", "Y", "Z", "ZH"]
# ARPAbet with lexical stress on vowels, plus silence / short pause / spoken noise
DEFAULT_SYMBOLS = tuple([v + s for v in _VOWELS for s in "012"] + _CONSONANTS + ["sil", "sp", "spn"])
assert len(DEFAULT_SYMBOLS) == N_PHONES

_WORD_RE = re.compile(r"[A-Z0-9']+")


class OOVError(ValidationError):
    def __init__(self, words):
        super().__init__(f"words missing from lexicon: {', '.join(words)}")
        self.words = list(words)


@dataclass(frozen=True)
class PhonemeSequence:
    ids: np.ndarray
    text: str | None = None

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= N_PHONES):
            raise ValidationError(f"phoneme id outside [0, {N_PHONES})")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.ids.size


@dataclass
class Lexicon:
    entries: dict = field(default_factory=dict)  # WORD -> tuple of ids
    symbols: tuple = DEFAULT_SYMBOLS

    def __post_init__(self):
        if len(self.symbols) != N_PHONES:
            raise ValidationError(f"symbol table must have {N_PHONES} entries, got {len(self.symbols)}")
        self._ids = {s: i for i, s in enumerate(self.symbols)}
        self.entries = {w.upper(): tuple(int(i) for i in ids) for w, ids in self.entries.items()}
        for w, ids in self.entries.items():
            if any(not 0 <= i < N_PHONES for i in ids):
                raise ValidationError(f"lexicon entry {w} has an invalid phoneme id")

    def symbol_id(self, sym):
        try:
            return self._ids[sym]
        except KeyError:
            raise ValidationError(f"unknown phoneme symbol {sym!r}") from None

    def add(self, word, symbols):
        self.entries[word.upper()] = tuple(self.symbol_id(s) for s in symbols)

    def __contains__(self, word):
        return word.upper() in self.entries

    def __len__(self):
        return len(self.entries)

    def write(self, path):
        with open(path, "w") as fh:
            for w in sorted(self.entries):
                fh.write(w + " " + " ".join(self.symbols[i] for i in self.entries[w]) + "\n")


def load_symbols(path):
    syms = tuple(line.strip() for line in open(path) if line.strip())
    if len(syms) != N_PHONES:
        raise ValidationError(f"{path}: expected {N_PHONES} symbols, found {len(syms)}")
    return syms


def write_symbols(path, symbols=DEFAULT_SYMBOLS):
    Path(path).write_text("\n".join(symbols) + "\n")


def load_lexicon(path, symbols_path=None) -> Lexicon:
    lex = Lexicon({}, load_symbols(symbols_path) if symbols_path else DEFAULT_SYMBOLS)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            word, *phones = line.split()
            if not phones:
                raise ValidationError(f"{path}:{lineno}: entry {word} has no phonemes")
            if word.upper() in lex:
                continue  # first pronunciation wins
            lex.add(word, phones)
    return lex


def normalize_words(text):
    return _WORD_RE.findall(text.upper())


def text_to_phonemes(text: str, lex: Lexicon, boundary: str | None = None) -> PhonemeSequence:
    """Concatenate the lexicon pronunciations of every word in ``text``.

    ``boundary`` names a symbol (e.g. ``"sp"``) inserted between words.
    Unknown words raise :class:`OOVError` listing all of them.
    """
    if not text or not text.strip():
        raise ValidationError("text is empty")
    words = normalize_words(text)
    if not words:
        raise ValidationError(f"no words found in {text!r}")
    oov = [w for w in words if w not in lex.entries]
    if oov:
        raise OOVError(list(dict.fromkeys(oov)))
    sep = [lex.symbol_id(boundary)] if boundary else []
    ids = []
    for k, w in enumerate(words):
        if k:
            ids.extend(sep)
        ids.extend(lex.entries[w])
    return PhonemeSequence(ids, text)
