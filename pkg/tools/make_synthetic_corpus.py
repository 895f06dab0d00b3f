#!/usr/bin/env python3
"""Generate the bundled synthetic grammar corpus.

A small templated language with productive morphology: noun and verb
stems take regular suffixes (-s, -ed, -ing), so morph-level models can
share statistics across inflections while the sentence grammar gives an
LSTM plenty of structure to beat a unigram baseline.

Deterministic for a fixed seed; the checked-in corpus under
tests/data/synthetic_grammar/ was produced with the defaults below:

    python tools/make_synthetic_corpus.py --out tests/data/synthetic_grammar
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

NOUNS = [
    "dog", "cat", "bird", "fish", "horse", "mouse", "wolf", "bear", "fox",
    "deer", "frog", "snake", "eagle", "shark", "crab",
]
VERBS = [
    "walk", "talk", "jump", "hunt", "watch", "follow", "chase", "call",
    "help", "avoid", "visit", "trust", "fear", "join", "lead",
]
ADJECTIVES = ["big", "small", "fast", "slow", "dark", "pale", "wild", "calm", "young", "old"]
DETERMINERS = ["the", "a", "one", "each", "every"]
ADVERBS = ["now", "here", "today", "again", "alone"]
CONJUNCTION = "and"


def noun_phrase(rng) -> tuple[list[str], bool]:
    det = DETERMINERS[rng.integers(len(DETERMINERS))]
    words = [det]
    if rng.random() < 0.4:
        words.append(ADJECTIVES[rng.integers(len(ADJECTIVES))])
    noun = NOUNS[rng.integers(len(NOUNS))]
    plural = det == "the" and rng.random() < 0.35
    words.append(noun + "s" if plural else noun)
    return words, plural


def verb_form(rng, plural_subject: bool) -> str:
    verb = VERBS[rng.integers(len(VERBS))]
    roll = rng.random()
    if roll < 0.35:
        return verb if plural_subject else verb + "s"
    if roll < 0.7:
        return verb + "ed"
    return verb + "ing"


def sentence(rng) -> list[str]:
    subject, plural = noun_phrase(rng)
    words = subject + [verb_form(rng, plural)]
    if rng.random() < 0.75:
        obj, _ = noun_phrase(rng)
        words += obj
    if rng.random() < 0.25:
        words.append(ADVERBS[rng.integers(len(ADVERBS))])
    if rng.random() < 0.15:
        words.append(CONJUNCTION)
        words += sentence(rng)
    return words


def generate(rng, n_tokens: int) -> list[str]:
    lines = []
    count = 0
    while count < n_tokens:
        words = sentence(rng)
        lines.append(" ".join(words))
        count += len(words) + 1  # sentence terminator counts as a token
    return lines


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tests/data/synthetic_grammar")
    parser.add_argument("--seed", type=int, default=20240817)
    parser.add_argument("--train-tokens", type=int, default=50_000)
    parser.add_argument("--valid-tokens", type=int, default=5_000)
    parser.add_argument("--test-tokens", type=int, default=5_000)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, n in [
        ("train", args.train_tokens),
        ("valid", args.valid_tokens),
        ("test", args.test_tokens),
    ]:
        lines = generate(rng, n)
        (out / f"{split}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"{split}: {sum(len(l.split()) + 1 for l in lines)} tokens, {len(lines)} sentences")


if __name__ == "__main__":
    main()
