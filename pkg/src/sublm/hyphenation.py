"""Syllable approximation via Liang's pattern hyphenation algorithm.

Patterns are letter n-grams with interleaved digit weights (``.ach4``,
``hy3ph``...).  All patterns matching anywhere in ``.word.`` vote on each
inter-letter position; odd maxima mark break points.  Breaks closer than
``left_min`` to the start or ``right_min`` to the end are suppressed, the
TeX convention (2/3 for English), so short words pass through whole.

A full public-domain English pattern set is bundled under
``sublm/data/hyphen-en.txt``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from sublm.errors import DataError

_DIGITS = re.compile(r"\d")


@dataclass
class HyphenationPatterns:
    """A compiled pattern set plus the minimum fragment lengths."""

    patterns: dict[str, tuple[int, ...]]  # letters -> weights, len(letters)+1 each
    left_min: int = 2
    right_min: int = 3
    # trie over pattern letters; leaves keyed by None hold the weight tuple
    _trie: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.left_min < 1 or self.right_min < 1:
            raise DataError("left_min and right_min must be >= 1")
        self._trie = {}
        for chars, points in self.patterns.items():
            node = self._trie
            for ch in chars:
                node = node.setdefault(ch, {})
            node[None] = points


def parse_pattern(raw: str) -> tuple[str, tuple[int, ...]]:
    """Split a raw pattern into its letters and interleaved weights.

    ``'a1bc3d4'`` -> ``('abcd', (0, 1, 0, 3, 4))``: weight ``i`` sits
    before letter ``i`` (the final slot sits after the last letter).
    """
    chars = _DIGITS.sub("", raw)
    points = [0] * (len(chars) + 1)
    pos = 0
    for ch in raw:
        if ch.isdigit():
            points[pos] = int(ch)
        else:
            pos += 1
    return chars, tuple(points)


def load_patterns(
    path: str | Path, left_min: int = 2, right_min: int = 3
) -> HyphenationPatterns:
    """Load a TeX-format pattern file (one pattern per line).

    ``%`` comments and ``\\patterns{...}`` wrappers are tolerated so stock
    distribution files load unmodified.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"pattern file not found: {path}")
    patterns: dict[str, tuple[int, ...]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("%", 1)[0].strip()
        line = line.replace("\\patterns{", "").replace("}", "")
        for raw in line.split():
            chars, points = parse_pattern(raw)
            if chars:
                patterns[chars] = points
    if not patterns:
        raise DataError(f"no patterns found in {path}")
    return HyphenationPatterns(patterns=patterns, left_min=left_min, right_min=right_min)


def load_english_patterns() -> HyphenationPatterns:
    """The bundled public-domain English pattern set."""
    ref = resources.files("sublm").joinpath("data/hyphen-en.txt")
    with resources.as_file(ref) as path:
        return load_patterns(path)


def split_weights(word: str, patterns: HyphenationPatterns) -> list[int]:
    """Max interleaved pattern weight at each of the len(word)-1 gaps."""
    work = "." + word.lower() + "."
    weights = [0] * (len(work) + 1)
    trie = patterns._trie
    for start in range(len(work)):
        node = trie
        for ch in work[start:]:
            node = node.get(ch)
            if node is None:
                break
            points = node.get(None)
            if points is not None:
                for j, p in enumerate(points):
                    if p > weights[start + j]:
                        weights[start + j] = p
    # weights[i] sits before work[i]; gap after word char k is weights[k+1].
    return [weights[k + 1] for k in range(1, len(word))]


def syllabify(word: str, patterns: HyphenationPatterns) -> list[str]:
    """Split a word at its hyphenation points; unsplittable words pass whole."""
    if not word:
        raise DataError("cannot syllabify an empty word")
    n = len(word)
    if n < patterns.left_min + patterns.right_min:
        return [word]
    gaps = split_weights(word, patterns)
    pieces = []
    prev = 0
    for k in range(1, n):
        if gaps[k - 1] % 2 == 1 and k >= patterns.left_min and n - k >= patterns.right_min:
            pieces.append(word[prev:k])
            prev = k
    pieces.append(word[prev:])
    return pieces
