"""Diagnostics over trained models.

Nearest neighbors under cosine similarity (input or output side, with
on-the-fly embedding of out-of-vocabulary words when their units are
known), PCA variance-retention curves, kernel density estimates of
highway transform-gate activity, the perplexity-gain vs type-token-ratio
regression, cross-corpus transfer with novel-unit accounting, and
parameter-count reports.

Everything here treats the model as frozen and returns plain data
(series, records, rows) ready for CSV/JSON dumping or plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from sublm import numcore as nc
from sublm.corpus import EOS, UNK, EncodedStream, Vocabulary, build_word_vocab, encode
from sublm.embedders import embed_packed, pack_units
from sublm.errors import DataError
from sublm.rnnlm import LanguageModel, build_registry, preset_config
from sublm.segmentation import SPECIAL_WORDS, char_sequence
from sublm.tying import TyingReport, count_parameters
from sublm.trainer import evaluate_ppl


# ---------------------------------------------------------------------------
# nearest neighbors
# ---------------------------------------------------------------------------


@dataclass
class NeighborReport:
    query: str
    side: str  # "input" | "output"
    neighbors: list[tuple[str, float]]  # sorted by similarity, descending
    available: bool = True
    reason: str = ""


def _segment_new_word(model: LanguageModel, word: str):
    """Unit index row for a word outside the vocabulary, or (None, why)."""
    sub = model.subvocab
    if model.config.units == "char":
        if any(ch not in sub.id_of for ch in word):
            return None, "contains characters outside the unit vocabulary"
        max_len = len(model.seg.units[0])
        return char_sequence(word, max_len, sub), ""
    if model.segmenter is None:
        return None, "no segmenter attached to the model"
    try:
        parts = model.segmenter.segment_string(word)
    except DataError as exc:
        return None, str(exc)
    missing = [p for p in parts if p not in sub.id_of]
    if missing:
        return None, f"failed to segment into known units (unknown: {missing})"
    return np.array([sub.id_of[p] for p in parts], dtype=np.int32), ""


def embed_word_string(model: LanguageModel, word: str) -> tuple[np.ndarray | None, str]:
    """Input-side vector of an arbitrary word string, if its units are known."""
    if word in model.vocab.id_of:
        return model.input_matrix_frozen()[model.vocab.id_of[word]], ""
    if model.config.units == "word":
        return None, "out-of-vocabulary word in a word-level model"
    row, reason = _segment_new_word(model, word)
    if row is None:
        return None, reason
    packed = pack_units([row], model.config.embedder, model.subvocab)
    with nc.no_grad():
        vec = embed_packed(model.input_stack, model.registry, packed).data[0]
    return vec, ""


def nearest_neighbors(
    model: LanguageModel, word: str, side: str = "input", k: int = 5
) -> NeighborReport:
    """Top-k cosine neighbors of `word` among the vocabulary's vectors."""
    if side not in ("input", "output"):
        raise DataError(f"side must be input or output, got {side!r}")
    if side == "output":
        if word not in model.vocab.id_of:
            raise DataError(f"{word!r} is not in the vocabulary (output side)")
        matrix = model.output_matrix_frozen()
        query_vec = matrix[model.vocab.id_of[word]]
    else:
        matrix = model.input_matrix_frozen()
        query_vec, reason = embed_word_string(model, word)
        if query_vec is None:
            return NeighborReport(
                query=word, side=side, neighbors=[], available=False, reason=reason
            )
    norms = np.linalg.norm(matrix, axis=1) * max(np.linalg.norm(query_vec), 1e-12)
    sims = matrix @ query_vec / np.maximum(norms, 1e-12)
    order = np.argsort(-sims)
    neighbors = []
    for idx in order:
        w = model.vocab.word_of[idx]
        if w == word:
            continue
        neighbors.append((w, float(sims[idx])))
        if len(neighbors) == k:
            break
    return NeighborReport(query=word, side=side, neighbors=neighbors)


# ---------------------------------------------------------------------------
# PCA variance curves
# ---------------------------------------------------------------------------


@dataclass
class VarianceCurve:
    components: np.ndarray  # 1..n
    retained: np.ndarray  # fraction of total variance, nondecreasing to 1


def pca_curve(matrix: np.ndarray) -> VarianceCurve:
    """Fraction of total variance retained by the top-k principal components."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise DataError("PCA needs a matrix with at least two rows")
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    svals = np.linalg.svd(centered, compute_uv=False)
    power = svals**2
    total = power.sum()
    k = np.arange(1, len(svals) + 1)
    if total <= 0.0:
        return VarianceCurve(components=k, retained=np.ones(len(svals)))
    return VarianceCurve(components=k, retained=np.cumsum(power) / total)


# ---------------------------------------------------------------------------
# transform-gate density
# ---------------------------------------------------------------------------


@dataclass
class GateDensity:
    grid: np.ndarray
    density: np.ndarray
    samples: int
    bandwidth: float


def _silverman_bandwidth(x: np.ndarray) -> float:
    n = len(x)
    std = x.std(ddof=1) if n > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0.0:
        return 1e-3  # degenerate sample: effectively a spike
    return 0.9 * spread * n ** (-0.2)


def gaussian_kde(x: np.ndarray, grid_points: int = 512) -> GateDensity:
    """Gaussian KDE with Silverman's bandwidth on a padded support grid."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError("cannot estimate a density from an empty sample")
    h = _silverman_bandwidth(x)
    lo, hi = x.min() - 4 * h, x.max() + 4 * h
    grid = np.linspace(lo, hi, grid_points)
    z = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z**2).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return GateDensity(grid=grid, density=dens, samples=x.size, bandwidth=h)


def collect_gate_values(
    model: LanguageModel, word_ids: np.ndarray, side: str = "input"
) -> np.ndarray:
    """First-highway transform-gate activations over a sample of words."""
    if model.config.units == "word":
        raise DataError("word-level models have no highway layers")
    stack = model.input_stack if side == "input" else model.output_stack
    trap: list[np.ndarray] = []
    packed = pack_units(
        [model.seg.units[w] for w in word_ids], model.config.embedder, model.subvocab
    )
    with nc.no_grad():
        embed_packed(stack, model.registry, packed, gate_trap=trap)
    return np.concatenate([t.ravel() for t in trap])


def gate_kde(
    model: LanguageModel, word_ids: np.ndarray, side: str = "input"
) -> GateDensity:
    """KDE of the first highway layer's transform gates on sampled words."""
    return gaussian_kde(collect_gate_values(model, word_ids, side))


# ---------------------------------------------------------------------------
# perplexity gain vs type-token ratio
# ---------------------------------------------------------------------------


@dataclass
class TTRPoint:
    label: str
    ttr: float
    delta_ppl: float


def load_ttr_fixture() -> list[TTRPoint]:
    """The bundled reference points (published perplexities, 19 rows)."""
    ref = resources.files("sublm").joinpath("data/ppl_gain_vs_ttr.csv")
    points = []
    with ref.open(encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            ttr = float(row["word_types"]) / float(row["train_tokens"])
            delta = float(row["ppl_word_reuse"]) - float(row["ppl_morph_reuse"])
            points.append(TTRPoint(label=row["label"], ttr=ttr, delta_ppl=delta))
    return points


def ttr_fit(points: list[TTRPoint]) -> dict:
    """Through-origin slope and Pearson correlation of gain against TTR."""
    if not points:
        raise DataError("no points to fit")
    x = np.array([p.ttr for p in points], dtype=np.float64)
    y = np.array([p.delta_ppl for p in points], dtype=np.float64)
    if np.all(x == 0):
        raise DataError("all TTR values are zero")
    slope = float((x * y).sum() / (x * x).sum())
    if len(points) < 2 or x.std() == 0 or y.std() == 0:
        return {"slope": slope, "pearson_r": None, "n": len(points)}
    return {
        "slope": slope,
        "pearson_r": float(np.corrcoef(x, y)[0, 1]),
        "n": len(points),
    }


# ---------------------------------------------------------------------------
# cross-corpus transfer
# ---------------------------------------------------------------------------


@dataclass
class TransferReport:
    new_oov_tokens: int
    new_oov_types: int
    ppl: float
    eval_vocab_size: int


def oov_transfer(
    model: LanguageModel,
    test_tokens: list[str],
    batch_size: int = 20,
    steps: int = 35,
) -> TransferReport:
    """Score foreign text, replacing words with unseen units by <unk>.

    The evaluation vocabulary is rebuilt from the (rewritten) test stream:
    its words are embedded through the trained subword networks, so words
    never seen in training are still scorable as long as all their units
    are known.  Bias terms transfer for shared words and are zero for new
    ones.
    """
    if model.config.units == "word":
        raise DataError("transfer applies to subword models")
    embeddable: dict[str, np.ndarray | None] = {}
    rewritten = []
    new_oov_tokens = 0
    for tok in test_tokens:
        if tok in (UNK, EOS):
            rewritten.append(tok)
            continue
        if tok not in embeddable:
            row, _ = (
                (model.seg.units[model.vocab.id_of[tok]], "")
                if tok in model.vocab.id_of
                else _segment_new_word(model, tok)
            )
            embeddable[tok] = row
        if embeddable[tok] is None:
            rewritten.append(UNK)
            new_oov_tokens += 1
        else:
            rewritten.append(tok)
    new_oov_types = sum(1 for row in embeddable.values() if row is None)

    eval_vocab = build_word_vocab(rewritten)
    unit_rows = []
    for w in eval_vocab.word_of:
        if w in SPECIAL_WORDS:
            idx = model.vocab.id_of[w]
            unit_rows.append(model.seg.units[idx])
        else:
            unit_rows.append(embeddable[w])
    packed = pack_units(unit_rows, model.config.embedder, model.subvocab)
    with nc.no_grad():
        in_matrix = embed_packed(model.input_stack, model.registry, packed).data
        out_matrix = embed_packed(model.output_stack, model.registry, packed).data
    bias = np.zeros(len(eval_vocab), dtype=model.registry.dtype)
    for i, w in enumerate(eval_vocab.word_of):
        if w in model.vocab.id_of:
            bias[i] = model.bias.data[model.vocab.id_of[w]]

    stream = encode(rewritten, eval_vocab)
    ppl = _ppl_with_matrices(model, stream, in_matrix, out_matrix, bias, batch_size, steps)
    return TransferReport(
        new_oov_tokens=new_oov_tokens,
        new_oov_types=new_oov_types,
        ppl=ppl,
        eval_vocab_size=len(eval_vocab),
    )


def _ppl_with_matrices(
    model: LanguageModel,
    stream: EncodedStream,
    in_matrix: np.ndarray,
    out_matrix: np.ndarray,
    bias: np.ndarray,
    batch_size: int,
    steps: int,
) -> float:
    """Perplexity with explicit embedding/projection matrices (frozen)."""
    from sublm.corpus import batchify
    from sublm.rnnlm import LMState, logits, lstm_step

    views = batchify(stream, batch_size, steps)
    state = LMState.zeros(
        model.config.n_lstm_layers, batch_size, model.config.d_lm, model.registry.dtype
    )
    out_node = nc.constant(out_matrix)
    bias_node = nc.constant(bias)
    total, count = 0.0, 0
    with nc.no_grad():
        for view in views:
            layers = list(state.layers)
            for t in range(view.inputs.shape[1]):
                x = nc.constant(in_matrix[view.inputs[:, t]])
                new_layers = []
                for layer in range(model.config.n_lstm_layers):
                    h, c = layers[layer]
                    h, c = lstm_step(model, layer, x, h, c)
                    new_layers.append((h, c))
                    x = h
                layers = new_layers
                loss = nc.softmax_cross_entropy(
                    logits(x, out_node, bias_node), view.targets[:, t], reduction="sum"
                )
                total += loss.item()
                count += view.inputs.shape[0]
            state = LMState(layers=layers).detached()
    return float(np.exp(total / count))


# ---------------------------------------------------------------------------
# parameter report
# ---------------------------------------------------------------------------


@dataclass
class ParamReportRow:
    units: str
    size: str
    reuse: str
    report: TyingReport

    @property
    def millions(self) -> float:
        return self.report.unique_params / 1e6


def param_report(
    units_list: list[str],
    sizes: list[str],
    reuse_modes: list[str],
    n_words: int,
    n_units_by_kind: dict[str, int],
    softmax: str | None = None,
) -> list[ParamReportRow]:
    """Unique-parameter counts for a grid of configurations (no data pass)."""
    rows = []
    for units in units_list:
        for size in sizes:
            for reuse in reuse_modes:
                if units == "word" and reuse in ("rw",):
                    continue  # nothing shareable beyond the embedding table
                config = preset_config(units, size, reuse, softmax=softmax)
                registry, _, _, tied = build_registry(
                    config, n_words, n_units_by_kind.get(units, 0)
                )
                rows.append(
                    ParamReportRow(
                        units=units,
                        size=size,
                        reuse=reuse,
                        report=count_parameters(registry, tied),
                    )
                )
    return rows
