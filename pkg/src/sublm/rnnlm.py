"""Two-layer LSTM language model over composed word embeddings.

The softmax head comes in two variants: a plain word-level projection
matrix, or a subword-based projection whose rows are generated by running
an embedding network over the whole vocabulary (rebuilt whenever the
underlying parameters move).  A sampled-softmax estimator handles large
vocabularies: negatives are drawn without replacement from a log-uniform
rank distribution with exact inclusion probabilities, so the estimate
reduces to the exact loss as the sample fraction approaches one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sublm import numcore as nc
from sublm.corpus import Vocabulary
from sublm.embedders import (
    EmbedderConfig,
    EmbedderStack,
    PackedUnits,
    WordVectorCache,
    build_stack,
    embed_packed,
    embed_words,
    pack_units,
)
from sublm.errors import ConfigError, NumericError
from sublm.numcore import ParamRegistry, Tensor
from sublm.segmentation import Segmentation, SubwordVocabulary
from sublm.tying import TyingConfig, apply_tying

UNITS = ("word", "char", "syl", "morph")
_UNIT_KIND = {"word": "word", "char": "charcnn", "syl": "sylconcat", "morph": "morphsum"}

# gate order inside the fused 4d weight blocks
GATES = ("input", "forget", "cell", "output")


@dataclass
class ModelConfig:
    """Architecture of one language model."""

    units: str
    d_lm: int
    embedder: EmbedderConfig
    softmax: str = "subword"  # "word" (plain projection) or "subword" (generated)
    reuse: str = "none"
    tie_layers: tuple[str, ...] = ()
    n_lstm_layers: int = 2
    size: str = "custom"  # bookkeeping only: small / medium / custom

    def __post_init__(self):
        if self.units not in UNITS:
            raise ConfigError(f"unknown units {self.units!r}")
        if self.softmax not in ("word", "subword"):
            raise ConfigError(f"unknown softmax variant {self.softmax!r}")
        if self.units == "word":
            self.softmax = "word"
        if _UNIT_KIND[self.units] != self.embedder.kind:
            raise ConfigError(
                f"units {self.units!r} need embedder kind {_UNIT_KIND[self.units]!r}"
            )
        if self.softmax == "word" and self.units != "word" and self.reuse != "none":
            raise ConfigError(
                "plain word softmax over subword inputs has no shareable weights"
            )
        if self.softmax == "subword" and self.embedder.output_dim != self.d_lm:
            raise ConfigError(
                f"generated softmax needs embedder output {self.embedder.output_dim} "
                f"to equal the LSTM state size {self.d_lm}"
            )

    @property
    def tying(self) -> TyingConfig:
        if self.reuse == "custom":
            return TyingConfig(mode="custom", custom_layers=self.tie_layers)
        return TyingConfig(mode=self.reuse)


def preset_embedder(units: str, size: str, softmax: str = "subword") -> EmbedderConfig:
    """Published small/medium dimensions for each unit scheme.

    With the generated (subword) softmax the network must end at the LSTM
    state size, so the character CNN (and the medium syllable model, whose
    concatenation is wider than the state) get a linear projection; with a
    plain word softmax the composed width feeds the LSTM directly.
    """
    if size not in ("small", "medium"):
        raise ConfigError(f"unknown preset size {size!r}")
    small = size == "small"
    d_lm = 200 if small else 650
    if units == "word":
        return EmbedderConfig(kind="word", d_s=d_lm)
    if units == "char":
        widths = tuple(range(1, 7))
        maps = tuple((25 * w) if small else min(200, 50 * w) for w in widths)
        return EmbedderConfig(
            kind="charcnn",
            d_s=15,
            filter_widths=widths,
            feature_maps=maps,
            d_hw=d_lm if softmax == "subword" else 0,
        )
    if units == "syl":
        d_s = 50 if small else 200
        d_hw = d_lm if softmax == "subword" else 4 * d_s
        return EmbedderConfig(kind="sylconcat", d_s=d_s, d_hw=d_hw, syllable_slots=4)
    if units == "morph":
        return EmbedderConfig(kind="morphsum", d_s=d_lm, d_hw=d_lm)
    raise ConfigError(f"unknown units {units!r}")


def preset_config(
    units: str, size: str, reuse: str = "none", softmax: str | None = None, **overrides
) -> ModelConfig:
    if softmax is None:
        softmax = "word" if units == "word" else "subword"
    return ModelConfig(
        units=units,
        d_lm=200 if size == "small" else 650,
        embedder=preset_embedder(units, size, softmax),
        softmax=softmax,
        reuse=reuse,
        size=size,
        **overrides,
    )


@dataclass
class LMState:
    """Per-layer recurrent state, one row per batch lane."""

    layers: list[tuple[Tensor, Tensor]]  # (h, c)

    @classmethod
    def zeros(cls, n_layers: int, batch_size: int, d: int, dtype) -> "LMState":
        return cls(
            layers=[
                (
                    nc.constant(np.zeros((batch_size, d)), dtype),
                    nc.constant(np.zeros((batch_size, d)), dtype),
                )
                for _ in range(n_layers)
            ]
        )

    def detached(self) -> "LMState":
        """Cut the graph at a BPTT boundary, keeping the values."""
        return LMState(
            layers=[
                (nc.constant(h.data.copy(), h.dtype), nc.constant(c.data.copy(), c.dtype))
                for h, c in self.layers
            ]
        )


@dataclass
class DropoutMasks:
    """Variational masks, fixed across the time steps of one window."""

    rate: float
    x_masks: list[np.ndarray]  # per layer, [batch x d_in]
    h_masks: list[np.ndarray]  # per layer, [batch x d]


def sample_masks(
    rng: np.random.Generator, rate: float, batch_size: int, in_dims: list[int], d: int
) -> DropoutMasks:
    def mask(cols):
        return (rng.random((batch_size, cols)) >= rate).astype(np.float64)

    return DropoutMasks(
        rate=rate,
        x_masks=[mask(k) for k in in_dims],
        h_masks=[mask(d) for _ in in_dims],
    )


@dataclass
class LanguageModel:
    """Assembled parameters plus the lookup structures to run them."""

    config: ModelConfig
    registry: ParamRegistry
    vocab: Vocabulary
    input_stack: EmbedderStack
    output_stack: EmbedderStack
    subvocab: SubwordVocabulary | None = None
    seg: Segmentation | None = None
    segmenter: object | None = None  # produces units for words outside the vocab
    packed_vocab: PackedUnits | None = None
    tied_layers: list[str] = field(default_factory=list)
    cache: WordVectorCache = field(default_factory=WordVectorCache)
    input_cache: WordVectorCache = field(default_factory=WordVectorCache)

    @property
    def n_words(self) -> int:
        return len(self.vocab)

    @property
    def lstm_dims(self) -> list[int]:
        """Input width of each LSTM layer."""
        first = self.config.embedder.output_dim
        return [first] + [self.config.d_lm] * (self.config.n_lstm_layers - 1)

    def lstm_slot(self, layer: int, part: str):
        return self.registry[f"lstm.l{layer}.{part}"].tensor

    @property
    def bias(self) -> Tensor:
        return self.registry["head.bias"].tensor

    def embed_input_words(self, word_ids: np.ndarray, gate_trap=None) -> Tensor:
        return embed_words(
            self.input_stack, self.registry, word_ids, self.seg, self.subvocab, gate_trap
        )

    def output_matrix_node(self, gate_trap=None) -> Tensor:
        """Output projection rows as a graph node (training path)."""
        if self.config.softmax == "word":
            return self.registry["emb_out.emb.table"].tensor
        return embed_packed(self.output_stack, self.registry, self.packed_vocab, gate_trap)

    def output_matrix_frozen(self) -> np.ndarray:
        """Output projection rows as plain values (eval path, cached)."""
        if self.config.softmax == "word":
            return self.registry["emb_out.emb.table"].tensor.data
        return self.cache.get(self.output_stack, self.registry, self.packed_vocab)

    def input_matrix_frozen(self) -> np.ndarray:
        """Input-side embedding of every vocabulary word (eval path, cached)."""
        if self.config.units == "word":
            return self.registry["emb_in.emb.table"].tensor.data
        return self.input_cache.get(self.input_stack, self.registry, self.packed_vocab)


def build_registry(
    config: ModelConfig, n_words: int, n_units: int, dtype=np.float32
) -> tuple[ParamRegistry, EmbedderStack, EmbedderStack, list[str]]:
    """Register every parameter and apply tying; no data structures needed.

    Shapes depend only on the word-vocabulary size and the subword count,
    so parameter reports can run straight off a config.  Tying happens
    here, before any initialization, so initializers see the final
    storage layout.
    """
    registry = ParamRegistry(dtype=dtype)
    n_units_in = n_words if config.units == "word" else n_units
    input_stack = build_stack(registry, config.embedder, n_units_in, "emb_in")

    d = config.d_lm
    in_dims = [config.embedder.output_dim] + [d] * (config.n_lstm_layers - 1)
    for layer, d_in in enumerate(in_dims):
        registry.add(f"lstm.l{layer}.wx", (d_in, 4 * d))
        registry.add(f"lstm.l{layer}.wh", (d, 4 * d))
        registry.add(f"lstm.l{layer}.b", (4 * d,))

    if config.softmax == "word":
        out_cfg = EmbedderConfig(kind="word", d_s=d)
        output_stack = build_stack(registry, out_cfg, n_words, "emb_out")
    else:
        output_stack = build_stack(registry, config.embedder, n_units_in, "emb_out")
    registry.add("head.bias", (n_words,))

    tied: list[str] = []
    if config.reuse != "none":
        if config.units == "word":
            # only the word table is shareable; transposed use at output
            mask_modes = {"re": True, "rerw": True, "rw": False, "custom": None}
            tie_emb = mask_modes.get(config.reuse)
            if tie_emb is None:
                tie_emb = "emb" in config.tie_layers
            if tie_emb:
                if config.embedder.d_s != d:
                    raise ConfigError("tying word embeddings needs d_w == d_lm")
                tied = apply_tying(
                    registry, input_stack, output_stack, TyingConfig(mode="rerw")
                )
        else:
            tied = apply_tying(registry, input_stack, output_stack, config.tying)
    return registry, input_stack, output_stack, tied


def build_model(
    config: ModelConfig,
    vocab: Vocabulary,
    subvocab: SubwordVocabulary | None = None,
    seg: Segmentation | None = None,
    segmenter=None,
    dtype=np.float32,
) -> LanguageModel:
    """Assemble a runnable model around real vocabulary structures."""
    if config.units != "word" and (subvocab is None or seg is None):
        raise ConfigError("subword models need a subword vocabulary and segmentation")
    registry, input_stack, output_stack, tied = build_registry(
        config, len(vocab), len(subvocab) if subvocab else 0, dtype
    )
    model = LanguageModel(
        config=config,
        registry=registry,
        vocab=vocab,
        input_stack=input_stack,
        output_stack=output_stack,
        subvocab=subvocab,
        seg=seg,
        segmenter=segmenter,
        tied_layers=tied,
    )
    if config.units != "word":
        model.packed_vocab = pack_units(seg.units, config.embedder, subvocab)
    return model


def lstm_step(
    model: LanguageModel,
    layer: int,
    x: Tensor,
    h: Tensor,
    c: Tensor,
    masks: DropoutMasks | None = None,
) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; variational masks apply to x and recurrent h."""
    d = model.config.d_lm
    if masks is not None and masks.rate > 0.0:
        x = nc.dropout(x, masks.x_masks[layer].astype(x.dtype), masks.rate)
        h = nc.dropout(h, masks.h_masks[layer].astype(h.dtype), masks.rate)
    z = nc.add(
        nc.add(nc.matmul(x, model.lstm_slot(layer, "wx")), nc.matmul(h, model.lstm_slot(layer, "wh"))),
        model.lstm_slot(layer, "b"),
    )
    i = nc.sigmoid(nc.narrow(z, 1, 0, d))
    f = nc.sigmoid(nc.narrow(z, 1, d, d))
    g = nc.tanh(nc.narrow(z, 1, 2 * d, d))
    o = nc.sigmoid(nc.narrow(z, 1, 3 * d, d))
    c_new = nc.add(nc.mul(f, c), nc.mul(i, g))
    h_new = nc.mul(o, nc.tanh(c_new))
    return h_new, c_new


def logits(h: Tensor, out_matrix: Tensor, bias: Tensor) -> Tensor:
    """Pre-softmax scores h @ out_matrix^T + bias."""
    return nc.add(nc.matmul(h, nc.transpose(out_matrix)), bias)


def forward_window(
    model: LanguageModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    state: LMState,
    masks: DropoutMasks | None = None,
    sampled_fraction: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, LMState]:
    """Run one BPTT window; returns the summed NLL node and the next state.

    The returned state is already detached at the truncation boundary.
    Input embeddings are computed once for the window's distinct words;
    the output matrix node is built once and shared by all time steps.
    """
    batch, steps = inputs.shape
    distinct, inverse = np.unique(inputs, return_inverse=True)
    if nc.grad_enabled():
        emb = model.embed_input_words(distinct)
    else:
        emb = nc.constant(model.input_matrix_frozen()[distinct])
    inverse = inverse.reshape(batch, steps)

    use_sampling = sampled_fraction > 0.0
    if use_sampling:
        cand_matrix, cand_bias, corrections, local = _window_candidates(
            model, targets, sampled_fraction, rng
        )
    elif nc.grad_enabled():
        out_matrix = model.output_matrix_node()
    else:
        out_matrix = nc.constant(model.output_matrix_frozen())

    layers = list(state.layers)
    loss_total: Tensor | None = None
    for t in range(steps):
        x = nc.row_gather(emb, inverse[:, t])
        new_layers = []
        for layer in range(model.config.n_lstm_layers):
            h, c = layers[layer]
            h, c = lstm_step(model, layer, x, h, c, masks)
            new_layers.append((h, c))
            x = h
        layers = new_layers
        if use_sampling:
            scores = nc.add(nc.matmul(x, nc.transpose(cand_matrix)), cand_bias)
            scores = nc.add_const(scores, corrections.astype(x.dtype))
            step_loss = nc.softmax_cross_entropy(scores, local[:, t], reduction="sum")
        else:
            step_loss = nc.softmax_cross_entropy(
                logits(x, out_matrix, model.bias), targets[:, t], reduction="sum"
            )
        loss_total = step_loss if loss_total is None else nc.add(loss_total, step_loss)
    return loss_total, LMState(layers=layers).detached()


def _window_candidates(
    model: LanguageModel,
    targets: np.ndarray,
    sample_fraction: float,
    rng: np.random.Generator,
):
    """One shared candidate set per BPTT window.

    All of the window's target words are candidates (inclusion probability
    one); negatives top the set up to the sampled-softmax budget.  Only the
    candidate rows of the output projection are generated, which is what
    makes sampling pay off for the generated softmax.
    """
    if not 0.0 < sample_fraction < 1.0:
        raise NumericError(f"sample_fraction must be in (0, 1), got {sample_fraction}")
    if rng is None:
        raise NumericError("sampled softmax needs an RNG")
    v = model.n_words
    true_ids = np.unique(targets)
    k = max(1, int(round(sample_fraction * v)))
    k = min(k, v - len(true_ids))
    probs = _log_uniform_probs(v)
    rest = np.setdiff1d(np.arange(v), true_ids)
    if k > 0 and len(rest):
        neg_local, neg_pi = _pps_systematic(probs[rest], k, rng)
        negatives = rest[neg_local]
    else:
        negatives, neg_pi = np.zeros(0, dtype=np.int64), np.zeros(0)
    candidates = np.concatenate([true_ids, negatives])
    corrections = np.concatenate([np.zeros(len(true_ids)), -np.log(neg_pi)])
    if model.config.softmax == "word":
        table = model.registry["emb_out.emb.table"].tensor
        cand_matrix = nc.row_gather(table, candidates)
    else:
        cand_matrix = embed_words(
            model.output_stack, model.registry, candidates, model.seg, model.subvocab
        )
    cand_bias = nc.row_gather(model.bias, candidates)
    remap = {w: i for i, w in enumerate(candidates)}
    local = np.vectorize(remap.__getitem__)(targets)
    return cand_matrix, cand_bias, corrections, local


def _log_uniform_probs(n: int) -> np.ndarray:
    ranks = np.arange(n, dtype=np.float64)
    return np.log((ranks + 2.0) / (ranks + 1.0)) / np.log(n + 1.0)


def _pps_systematic(p: np.ndarray, k: int, rng: np.random.Generator):
    """Draw k distinct items with probability proportional to p.

    Returns (indices, inclusion_probabilities).  Items whose scaled weight
    reaches 1 become certainties (iteratively), the rest are picked by
    systematic sampling, so inclusion probabilities are exact and the draw
    degenerates to the full population as k approaches it.
    """
    n = len(p)
    if k >= n:
        return np.arange(n), np.ones(n)
    idx = np.arange(n)
    weights = p.astype(np.float64).copy()
    certain: list[np.ndarray] = []
    while k > 0 and len(idx):
        mass = weights.sum()
        cert = weights * k >= mass
        if not cert.any():
            break
        certain.append(idx[cert])
        k -= int(cert.sum())
        idx, weights = idx[~cert], weights[~cert]
        if k >= len(idx):
            certain.append(idx)
            k = 0
            idx = idx[:0]
    if k > 0:
        pi = k * weights / weights.sum()
        cum = np.cumsum(weights)
        stride = cum[-1] / k
        points = rng.uniform(0.0, stride) + stride * np.arange(k)
        chosen = np.searchsorted(cum, points, side="right")
        chosen = np.minimum(chosen, len(idx) - 1)
        sampled_idx, sampled_pi = idx[chosen], pi[chosen]
    else:
        sampled_idx = np.zeros(0, dtype=np.int64)
        sampled_pi = np.zeros(0)
    parts = certain + [sampled_idx]
    pis = [np.ones(len(c)) for c in certain] + [sampled_pi]
    return np.concatenate(parts).astype(np.int64), np.concatenate(pis)


def sampled_softmax_loss(
    h: Tensor,
    out_matrix: Tensor,
    bias: Tensor,
    targets: np.ndarray,
    sample_fraction: float,
    rng: np.random.Generator,
    reduction: str = "mean",
) -> Tensor:
    """NLL over a sampled candidate set instead of the full vocabulary.

    The batch's target words are always candidates.  Negatives are drawn
    without replacement from a log-uniform distribution over vocabulary
    ranks; each negative's logit is corrected by subtracting the log of
    its expected count (its inclusion probability), which makes the
    partition estimate unbiased and the loss exact once the candidate set
    covers the vocabulary.
    """
    if not 0.0 < sample_fraction < 1.0:
        raise NumericError(f"sample_fraction must be in (0, 1), got {sample_fraction}")
    targets = np.asarray(targets, dtype=np.int64)
    v = out_matrix.shape[0]
    true_ids = np.unique(targets)
    k = max(1, int(round(sample_fraction * v)))
    k = min(k, v - len(true_ids))

    probs = _log_uniform_probs(v)
    rest = np.setdiff1d(np.arange(v), true_ids, assume_unique=False)
    neg_local, neg_pi = _pps_systematic(probs[rest], k, rng)
    negatives = rest[neg_local]

    candidates = np.concatenate([true_ids, negatives])
    corrections = np.concatenate([np.zeros(len(true_ids)), -np.log(neg_pi)])

    cand_emb = nc.row_gather(out_matrix, candidates)
    cand_bias = nc.row_gather(bias, candidates)
    scores = nc.add(nc.matmul(h, nc.transpose(cand_emb)), cand_bias)
    scores = nc.add_const(scores, corrections.astype(h.dtype))

    remap = {w: i for i, w in enumerate(candidates)}
    local_targets = np.array([remap[t] for t in targets], dtype=np.int64)
    return nc.softmax_cross_entropy(scores, local_targets, reduction=reduction)
