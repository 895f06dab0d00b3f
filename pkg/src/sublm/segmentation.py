"""Subword vocabularies and per-word unit sequences.

Maps every vocabulary word to its subword index sequence under one of
three unit schemes: characters (fixed-length, with begin/end-of-word
markers and padding, for the convolutional embedder), syllables from
hyphenation patterns, or morphs from a trained MDL model.  Externally
produced segmentations can be injected from tab-separated files.

``<unk>`` and ``<eos>`` always receive dedicated atomic units so they are
embeddable like any other word.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sublm.corpus import EOS, UNK, Vocabulary
from sublm.errors import DataError
from sublm.hyphenation import HyphenationPatterns, syllabify
from sublm.morphs import MorphModel

PAD = "<pad>"
BOW = "<w>"
EOW = "</w>"

UNIT_KINDS = ("char", "syllable", "morph")
# tokens whose subword form is a single dedicated unit
SPECIAL_WORDS = (UNK, EOS)


@dataclass
class SubwordVocabulary:
    """Dense unit/index map for one unit scheme."""

    unit_of: list[str]
    unit_kind: str
    id_of: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.unit_kind not in UNIT_KINDS:
            raise DataError(f"unknown unit kind: {self.unit_kind}")
        self.id_of = {u: i for i, u in enumerate(self.unit_of)}
        if len(self.id_of) != len(self.unit_of):
            raise DataError("duplicate units in subword vocabulary")

    def __len__(self) -> int:
        return len(self.unit_of)

    def __contains__(self, unit: str) -> bool:
        return unit in self.id_of

    @property
    def pad_index(self) -> int:
        return self.id_of[PAD]

    @property
    def begin_of_word_index(self) -> int:
        if self.unit_kind != "char":
            raise DataError("begin-of-word marker exists only for char units")
        return self.id_of[BOW]

    @property
    def end_of_word_index(self) -> int:
        if self.unit_kind != "char":
            raise DataError("end-of-word marker exists only for char units")
        return self.id_of[EOW]

    def special_unit_index(self, word: str) -> int:
        return self.id_of[word]


@dataclass
class Segmentation:
    """Unit index sequences for every word index of a Vocabulary."""

    units: list[np.ndarray]  # word index -> int32 unit indices, len >= 1

    def __len__(self) -> int:
        return len(self.units)

    def lengths(self) -> np.ndarray:
        return np.array([len(u) for u in self.units], dtype=np.int32)

    def max_units(self) -> int:
        return int(self.lengths().max())


def char_sequence(
    word: str, max_len: int, vocab: SubwordVocabulary
) -> np.ndarray:
    """Fixed-length char index sequence: BOW + chars + EOW, PAD-filled.

    Words longer than ``max_len - 2`` are truncated from the right.
    """
    if max_len < 3:
        raise DataError(f"max_len must be >= 3, got {max_len}")
    chars = list(word)[: max_len - 2]
    seq = np.full(max_len, vocab.pad_index, dtype=np.int32)
    seq[0] = vocab.begin_of_word_index
    for i, ch in enumerate(chars):
        seq[1 + i] = vocab.id_of[ch]
    seq[1 + len(chars)] = vocab.end_of_word_index
    return seq


class CharSegmenter:
    """Splits words into characters; max_len derived from data if unset."""

    unit_kind = "char"

    def __init__(self, max_word_len: int | None = None):
        self.max_word_len = max_word_len

    def segment_string(self, word: str) -> list[str]:
        return list(word)


class SyllableSegmenter:
    """Splits words into syllables with a hyphenation pattern set."""

    unit_kind = "syllable"

    def __init__(self, patterns: HyphenationPatterns):
        self.patterns = patterns

    def segment_string(self, word: str) -> list[str]:
        return syllabify(word, self.patterns)


class MorphSegmenter:
    """Splits words into morphs with a trained MDL model."""

    unit_kind = "morph"

    def __init__(self, model: MorphModel):
        self.model = model

    def segment_string(self, word: str) -> list[str]:
        return self.model.segment(word)


class FixedSegmenter:
    """Serves externally produced segmentations from a word->units map."""

    def __init__(self, mapping: dict[str, list[str]], unit_kind: str):
        self.mapping = mapping
        self.unit_kind = unit_kind

    def segment_string(self, word: str) -> list[str]:
        try:
            return self.mapping[word]
        except KeyError:
            raise DataError(f"no segmentation on file for {word!r}") from None


def build_subword_vocab(
    vocab: Vocabulary, segmenter
) -> tuple[SubwordVocabulary, Segmentation]:
    """Materialize unit sequences for every vocabulary word.

    Deterministic: units are indexed in sorted order after the reserved
    specials.  ``<unk>``/``<eos>`` map to single dedicated units (for char
    units they are wrapped in the usual begin/end markers).
    """
    kind = segmenter.unit_kind
    surface: dict[int, list[str]] = {}
    units: set[str] = set()
    for idx, word in enumerate(vocab.word_of):
        if word in SPECIAL_WORDS:
            continue
        parts = segmenter.segment_string(word)
        if not parts or "".join(parts) != word:
            raise DataError(f"segmentation of {word!r} does not concatenate back")
        surface[idx] = parts
        units.update(parts)

    specials = [PAD] + ([BOW, EOW] if kind == "char" else []) + list(SPECIAL_WORDS)
    sub = SubwordVocabulary(unit_of=specials + sorted(units), unit_kind=kind)

    if kind == "char":
        longest = max((len(p) for p in surface.values()), default=1)
        max_len = getattr(segmenter, "max_word_len", None) or longest + 2
        seqs = []
        for idx, word in enumerate(vocab.word_of):
            if word in SPECIAL_WORDS:
                seq = np.full(max_len, sub.pad_index, dtype=np.int32)
                seq[0] = sub.begin_of_word_index
                seq[1] = sub.special_unit_index(word)
                seq[2] = sub.end_of_word_index
                seqs.append(seq)
            else:
                seqs.append(char_sequence(word, max_len, sub))
        return sub, Segmentation(units=seqs)

    seqs = []
    for idx, word in enumerate(vocab.word_of):
        if word in SPECIAL_WORDS:
            seqs.append(np.array([sub.special_unit_index(word)], dtype=np.int32))
        else:
            ids = [sub.id_of[p] for p in surface[idx]]
            seqs.append(np.array(ids, dtype=np.int32))
    return sub, Segmentation(units=seqs)


def save_segmentation_file(
    path: str | Path, vocab: Vocabulary, segmenter, skip_specials: bool = True
) -> None:
    """Write `word<TAB>unit1 unit2 ...` lines for the whole vocabulary."""
    with open(path, "w", encoding="utf-8") as fh:
        for word in vocab.word_of:
            if skip_specials and word in SPECIAL_WORDS:
                continue
            fh.write(word + "\t" + " ".join(segmenter.segment_string(word)) + "\n")


def load_segmentation_file(path: str | Path, unit_kind: str) -> FixedSegmenter:
    """Load an external segmentation file, checking the concatenation invariant."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"segmentation file not found: {path}")
    mapping: dict[str, list[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            word, rest = line.split("\t", 1)
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected word<TAB>units") from None
        parts = rest.split()
        if not parts:
            raise DataError(f"{path}:{lineno}: empty unit list for {word!r}")
        if "".join(parts) != word:
            raise DataError(
                f"{path}:{lineno}: units {parts} do not concatenate to {word!r}"
            )
        mapping[word] = parts
    if not mapping:
        raise DataError(f"empty segmentation file: {path}")
    return FixedSegmenter(mapping, unit_kind)
