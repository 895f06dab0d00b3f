"""Corpus ingestion, word vocabulary, index encoding and BPTT batching.

Text is expected pre-tokenized (whitespace separated, one sentence per
line, PTB style); an ``<eos>`` token is appended to every line.  Batching
follows the usual contiguous language-model layout: the stream is cut
into ``batch_size`` contiguous lanes and consecutive windows of ``steps``
tokens are served with targets shifted by one position.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sublm.errors import DataError

UNK = "<unk>"
EOS = "<eos>"


@dataclass
class Vocabulary:
    """Bidirectional word/index map with dense indices.

    Index order is descending frequency with lexicographic tie-break, so
    rebuilding from the same corpus always yields the same mapping.
    """

    word_of: list[str]
    id_of: dict[str, int] = field(init=False)
    counts: dict[str, int] | None = None

    def __post_init__(self):
        self.id_of = {w: i for i, w in enumerate(self.word_of)}
        if len(self.id_of) != len(self.word_of):
            raise DataError("duplicate words in vocabulary")
        for special in (UNK, EOS):
            if special not in self.id_of:
                raise DataError(f"vocabulary is missing {special}")

    def __len__(self) -> int:
        return len(self.word_of)

    def __contains__(self, word: str) -> bool:
        return word in self.id_of

    @property
    def unk_index(self) -> int:
        return self.id_of[UNK]

    @property
    def eos_index(self) -> int:
        return self.id_of[EOS]

    def index(self, word: str) -> int:
        """Index of `word`, falling back to the <unk> index."""
        return self.id_of.get(word, self.id_of[UNK])

    def save(self, path: str | Path) -> None:
        """Write one `token<TAB>frequency` line per word, in index order."""
        counts = self.counts or {}
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.word_of:
                fh.write(f"{w}\t{counts.get(w, 0)}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        words, counts = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                words.append(parts[0])
                if len(parts) > 1:
                    counts[parts[0]] = int(parts[1])
        return cls(word_of=words, counts=counts or None)


@dataclass
class EncodedStream:
    """A split of the corpus as a flat index array; sentences end in <eos>."""

    tokens: np.ndarray  # int32 [T]

    @property
    def token_count(self) -> int:
        return int(self.tokens.shape[0])


@dataclass
class BatchView:
    """One BPTT window: `targets[b, t]` continues `inputs[b, t]`."""

    inputs: np.ndarray  # int32 [batch_size x steps]
    targets: np.ndarray  # int32 [batch_size x steps]


def load_corpus(path: str | Path, split: str = "train") -> list[str]:
    """Read a whitespace-tokenized text file into a token list.

    Each line becomes its tokens followed by ``<eos>``.  Raises DataError
    for missing files, empty corpora or undecodable bytes.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{split} corpus not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{split} corpus is not valid UTF-8: {path} ({exc})") from exc
    tokens: list[str] = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            continue
        tokens.extend(words)
        tokens.append(EOS)
    if not tokens:
        raise DataError(f"empty corpus: {path}")
    return tokens


def build_word_vocab(train_tokens: list[str], min_count: int = 1) -> Vocabulary:
    """Build the word vocabulary from training tokens.

    Words with frequency >= `min_count` are kept; ``<unk>`` and ``<eos>``
    are always present.  Order: descending frequency, then lexicographic.
    """
    if not train_tokens:
        raise DataError("cannot build vocabulary from an empty token sequence")
    counts = collections.Counter(train_tokens)
    kept = {w for w, c in counts.items() if c >= min_count}
    kept.update((UNK, EOS))
    words = sorted(kept, key=lambda w: (-counts.get(w, 0), w))
    return Vocabulary(word_of=words, counts=dict(counts))


def encode(tokens: list[str], vocab: Vocabulary) -> EncodedStream:
    """Map tokens to indices; out-of-vocabulary words become <unk>."""
    ids = np.fromiter((vocab.index(t) for t in tokens), dtype=np.int32, count=len(tokens))
    return EncodedStream(tokens=ids)


def decode(stream: EncodedStream, vocab: Vocabulary) -> list[str]:
    return [vocab.word_of[i] for i in stream.tokens]


def batchify(stream: EncodedStream, batch_size: int, steps: int) -> list[BatchView]:
    """Cut a stream into contiguous BPTT windows.

    Lane ``b`` covers ``tokens[b*L : b*L + n*steps + 1]`` with
    ``L = (T-1) // batch_size`` and ``n = L // steps`` windows; trailing
    remainder tokens are dropped.  Concatenating one lane's inputs across
    the returned views reproduces a contiguous slice of the stream.
    """
    if steps <= 0:
        raise DataError(f"steps must be positive, got {steps}")
    if batch_size <= 0:
        raise DataError(f"batch_size must be positive, got {batch_size}")
    tokens = stream.tokens
    lane_len = (len(tokens) - 1) // batch_size
    n_batches = lane_len // steps
    if n_batches == 0:
        raise DataError(
            f"stream too short: {len(tokens)} tokens cannot fill one "
            f"{batch_size}x{steps} batch (need >= {batch_size * steps + 1})"
        )
    # [batch_size x lane_len+1] with one-token overlap between the input
    # and target views of each lane.
    starts = np.arange(batch_size) * lane_len
    views = []
    for k in range(n_batches):
        off = k * steps
        idx = starts[:, None] + off + np.arange(steps)[None, :]
        views.append(BatchView(inputs=tokens[idx], targets=tokens[idx + 1]))
    return views


def corpus_stats(stream: EncodedStream, vocab: Vocabulary) -> dict:
    """Token count, type count and type-token ratio of a stream."""
    t = stream.token_count
    if t == 0:
        raise DataError("empty stream")
    return {"T": t, "type_count": len(vocab), "TTR": len(vocab) / t}
