"""Unsupervised morph segmentation by greedy MDL search.

A lightweight stand-in for a full morphological analyzer: the model keeps
a lexicon of morphs with corpus counts and minimizes a two-part code
length,

    total cost = corpus cost + lexicon cost
    corpus cost  = -sum_m count(m) * ln(count(m) / N)
    lexicon cost = sum over distinct morphs of the character code length
                   (uniform char model over the alphabet plus an
                   end-of-morph symbol)

Training recursively splits each word type at the binary cut that lowers
the total cost, keeping words whole when no cut pays off.  Inference is a
Viterbi pass over the learned morph probabilities with single-character
fallback for unsegmentable stretches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from sublm.errors import DataError

# Penalty (nats) per fallback character arc, on top of the floor
# probability; keeps real morph paths strictly preferred.
_FALLBACK_PENALTY = 20.0


@dataclass
class MorphModel:
    """Morph lexicon with counts and an incremental MDL cost."""

    alphabet: set[str]
    lexicon: dict[str, int] = field(default_factory=dict)
    analyses: dict[str, tuple[str, ...]] = field(default_factory=dict)
    total_tokens: int = 0
    _sum_nlogn: float = 0.0
    _lexicon_cost: float = 0.0

    @property
    def char_cost(self) -> float:
        """Code length in nats per character slot of a lexicon entry."""
        return math.log(len(self.alphabet) + 1)

    @property
    def corpus_cost(self) -> float:
        n = self.total_tokens
        if n == 0:
            return 0.0
        return n * math.log(n) - self._sum_nlogn

    @property
    def lexicon_cost(self) -> float:
        return self._lexicon_cost

    @property
    def total_cost(self) -> float:
        return self.corpus_cost + self.lexicon_cost

    # -- incremental count bookkeeping -------------------------------------

    def _add(self, morph: str, count: int) -> None:
        old = self.lexicon.get(morph, 0)
        new = old + count
        if old > 0:
            self._sum_nlogn -= old * math.log(old)
        else:
            self._lexicon_cost += (len(morph) + 1) * self.char_cost
        self._sum_nlogn += new * math.log(new)
        self.lexicon[morph] = new
        self.total_tokens += count

    def _remove(self, morph: str, count: int) -> None:
        old = self.lexicon[morph]
        new = old - count
        self._sum_nlogn -= old * math.log(old)
        if new > 0:
            self._sum_nlogn += new * math.log(new)
            self.lexicon[morph] = new
        else:
            del self.lexicon[morph]
            self._lexicon_cost -= (len(morph) + 1) * self.char_cost
        self.total_tokens -= count

    # -- training ----------------------------------------------------------

    def _resplit(self, s: str, count: int) -> tuple[str, ...]:
        """Recursively segment `s`, committing counts for the best analysis."""
        self._add(s, count)
        best_cost = self.total_cost
        self._remove(s, count)
        best_cut = 0
        for i in range(1, len(s)):
            self._add(s[:i], count)
            self._add(s[i:], count)
            cost = self.total_cost
            self._remove(s[:i], count)
            self._remove(s[i:], count)
            if cost < best_cost - 1e-12:
                best_cost = cost
                best_cut = i
        if best_cut == 0:
            self._add(s, count)
            return (s,)
        return self._resplit(s[:best_cut], count) + self._resplit(s[best_cut:], count)

    def segment(self, word: str) -> list[str]:
        """Stored analysis for trained words, Viterbi for anything else."""
        if word in self.analyses:
            return list(self.analyses[word])
        return self.viterbi_segment(word)[0]

    def viterbi_segment(self, word: str) -> tuple[list[str], bool]:
        """Best-probability segmentation of `word` under the morph unigram.

        Falls back to single-character pieces where no known morph fits;
        the returned flag is True when the word contains a character never
        seen in training.
        """
        if not word:
            raise DataError("cannot segment an empty word")
        n = self.total_tokens
        floor = math.log(0.5 / (n + 1)) - _FALLBACK_PENALTY
        best = [(-math.inf, 0)] * (len(word) + 1)
        best[0] = (0.0, 0)
        for end in range(1, len(word) + 1):
            for start in range(end):
                piece = word[start:end]
                count = self.lexicon.get(piece, 0)
                if count > 0:
                    score = best[start][0] + math.log(count / n)
                elif end - start == 1:
                    score = best[start][0] + floor
                else:
                    continue
                if score > best[end][0]:
                    best[end] = (score, start)
        morphs = []
        end = len(word)
        while end > 0:
            start = best[end][1]
            morphs.append(word[start:end])
            end = start
        morphs.reverse()
        novel = any(ch not in self.alphabet for ch in word)
        return morphs, novel


def train_morph_model(
    word_freqs: dict[str, int], max_passes: int = 10
) -> MorphModel:
    """Fit a morph lexicon to a word-frequency table.

    Word types are revisited in frequency order (ties broken
    lexicographically) for up to `max_passes` sweeps; each visit removes
    the word's current analysis and re-derives it by recursive binary
    splitting.  The total cost never increases across sweeps and training
    stops early once a sweep changes nothing.
    """
    if not word_freqs:
        raise DataError("cannot train a morph model on an empty lexicon")
    if any(c < 1 for c in word_freqs.values()):
        raise DataError("word frequencies must be >= 1")
    model = MorphModel(alphabet=set("".join(word_freqs)))
    order = sorted(word_freqs, key=lambda w: (-word_freqs[w], w))
    for word in order:
        model.analyses[word] = (word,)
        model._add(word, word_freqs[word])
    prev_cost = model.total_cost
    for _ in range(max_passes):
        changed = False
        for word in order:
            count = word_freqs[word]
            for morph in model.analyses[word]:
                model._remove(morph, count)
            analysis = model._resplit(word, count)
            if analysis != model.analyses[word]:
                changed = True
            model.analyses[word] = analysis
        cost = model.total_cost
        if cost > prev_cost + 1e-6:
            raise AssertionError("morph training cost increased within a pass")
        prev_cost = cost
        if not changed:
            break
    return model


def segment_word(word: str, model: MorphModel) -> list[str]:
    """Morph sequence of `word` under a trained model."""
    return model.segment(word)


def model_from_analyses(
    analyses: dict[str, list[str]], word_freqs: dict[str, int]
) -> MorphModel:
    """Rebuild a model from stored per-word analyses plus word frequencies.

    Used to restore a run from its segmentation file: morph counts are
    recomputed by weighting each analysis with its word's frequency, which
    reproduces the trained lexicon (and hence Viterbi behaviour) exactly.
    """
    if not analyses:
        raise DataError("no analyses to rebuild from")
    model = MorphModel(alphabet=set("".join(analyses)))
    for word, parts in analyses.items():
        count = word_freqs.get(word, 1)
        model.analyses[word] = tuple(parts)
        for morph in parts:
            model._add(morph, count)
    return model
