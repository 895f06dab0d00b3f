"""Word-embedding networks composed from subword units.

Three compositions over a subword embedding table, each topped by two
highway layers with ReLU nonlinearity:

* ``charcnn``   convolutions of several widths over the character
                sequence, tanh, max-over-time pooling per width.
* ``sylconcat`` syllable embeddings concatenated into a fixed number of
                slots (zero-padded / truncated).
* ``morphsum``  unweighted sum of morph embeddings.

A trivial ``word`` stack (plain embedding row lookup, no highway) is also
provided so the word-level baseline goes through the same machinery.

Each stack exposes its ordered bottom-up layer list (``emb`` first), the
unit of reuse when the stack is replayed on the output side to generate
the softmax projection matrix row by row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sublm import numcore as nc
from sublm.errors import ConfigError, NumericError
from sublm.numcore import ParamRegistry, Tensor
from sublm.segmentation import Segmentation, SubwordVocabulary

KINDS = ("word", "charcnn", "sylconcat", "morphsum")


@dataclass
class EmbedderConfig:
    """Dimensions of one embedding network.

    `d_hw` is the highway width and the stack's output width.  Constraints:
    sylconcat needs `syllable_slots * d_s == d_hw`; morphsum needs
    `d_s == d_hw`; charcnn defaults `d_hw` to the total feature-map count
    and inserts a linear projection below the first highway otherwise.
    """

    kind: str
    d_s: int = 0
    d_hw: int = 0
    # charcnn only
    filter_widths: tuple[int, ...] = ()
    feature_maps: tuple[int, ...] = ()
    max_word_len: int | None = None
    # sylconcat only
    syllable_slots: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "charcnn":
            if not self.filter_widths:
                raise ConfigError("charcnn needs filter widths")
            if len(self.filter_widths) != len(self.feature_maps):
                raise ConfigError("one feature-map count per filter width")
            if not self.d_hw:
                self.d_hw = self.total_feature_maps
        elif self.kind == "sylconcat":
            if not self.d_hw:
                self.d_hw = self.syllable_slots * self.d_s
        elif self.kind == "morphsum":
            if self.d_s != self.d_hw:
                raise ConfigError(f"morphsum: d_s must equal d_hw ({self.d_s} != {self.d_hw})")
        if self.kind == "word" and not self.d_hw:
            self.d_hw = self.d_s

    @property
    def total_feature_maps(self) -> int:
        return int(sum(self.feature_maps))

    @property
    def composed_width(self) -> int:
        """Width coming out of the composition, before any projection."""
        if self.kind == "charcnn":
            return self.total_feature_maps
        if self.kind == "sylconcat":
            return self.syllable_slots * self.d_s
        return self.d_hw

    @property
    def needs_projection(self) -> bool:
        return self.kind in ("charcnn", "sylconcat") and self.composed_width != self.d_hw

    @property
    def output_dim(self) -> int:
        return self.d_hw


@dataclass
class EmbedderStack:
    """One side's embedding network: named slots grouped into ordered layers."""

    config: EmbedderConfig
    prefix: str
    layers: list[tuple[str, list[str]]] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def layer_names(self) -> list[str]:
        return [name for name, _ in self.layers]

    def layer_slots(self, layer: str) -> list[str]:
        for name, slots in self.layers:
            if name == layer:
                return slots
        raise ConfigError(f"stack has no layer {layer!r}")

    @property
    def all_slots(self) -> list[str]:
        return [s for _, slots in self.layers for s in slots]


def _add_highway(registry: ParamRegistry, prefix: str, d: int) -> list[str]:
    names = [f"{prefix}.gate_w", f"{prefix}.gate_b", f"{prefix}.lin_w", f"{prefix}.lin_b"]
    registry.add(names[0], (d, d))
    registry.add(names[1], (d,))
    registry.add(names[2], (d, d))
    registry.add(names[3], (d,))
    return names


def build_stack(
    registry: ParamRegistry, config: EmbedderConfig, n_units: int, prefix: str
) -> EmbedderStack:
    """Register one side's parameters and return the layer map."""
    stack = EmbedderStack(config=config, prefix=prefix)
    emb_name = f"{prefix}.emb.table"
    if config.kind == "word":
        registry.add(emb_name, (n_units, config.d_hw))
        stack.layers.append(("emb", [emb_name]))
        return stack

    registry.add(emb_name, (n_units, config.d_s))
    stack.layers.append(("emb", [emb_name]))

    if config.kind == "charcnn":
        conv_slots = []
        for w, maps in zip(config.filter_widths, config.feature_maps):
            wn, bn = f"{prefix}.cnn.w{w}", f"{prefix}.cnn.b{w}"
            registry.add(wn, (w * config.d_s, maps))
            registry.add(bn, (maps,))
            conv_slots += [wn, bn]
        if config.needs_projection:
            pw, pb = f"{prefix}.cnn.proj_w", f"{prefix}.cnn.proj_b"
            registry.add(pw, (config.composed_width, config.d_hw))
            registry.add(pb, (config.d_hw,))
            conv_slots += [pw, pb]
        stack.layers.append(("cnn", conv_slots))
    elif config.kind == "sylconcat" and config.needs_projection:
        # concatenation itself is parameter-free; a width-adapting linear
        # map becomes its own composition layer when dims do not line up
        pw, pb = f"{prefix}.proj.w", f"{prefix}.proj.b"
        registry.add(pw, (config.composed_width, config.d_hw))
        registry.add(pb, (config.d_hw,))
        stack.layers.append(("proj", [pw, pb]))

    stack.layers.append(("hw1", _add_highway(registry, f"{prefix}.hw1", config.d_hw)))
    stack.layers.append(("hw2", _add_highway(registry, f"{prefix}.hw2", config.d_hw)))
    return stack


def highway_apply(
    x: Tensor,
    gate_w: Tensor,
    gate_b: Tensor,
    lin_w: Tensor,
    lin_b: Tensor,
    gate_trap: list | None = None,
) -> Tensor:
    """Gated mix t*ReLU(xA+b) + (1-t)*x with transform gate t=sigmoid(xW+c)."""
    t = nc.sigmoid(nc.add(nc.matmul(x, gate_w), gate_b))
    if gate_trap is not None:
        gate_trap.append(t.data.copy())
    transformed = nc.relu(nc.add(nc.matmul(x, lin_w), lin_b))
    carry = nc.add_const(nc.mul_const(t, -1.0), 1.0)
    return nc.add(nc.mul(t, transformed), nc.mul(carry, x))


def _run_highways(stack, registry, x, gate_trap):
    for layer in ("hw1", "hw2"):
        names = stack.layer_slots(layer)
        x = highway_apply(
            x,
            *(registry[n].tensor for n in names),
            gate_trap=gate_trap if layer == "hw1" else None,
        )
    return x


# ---------------------------------------------------------------------------
# packed unit batches: index bookkeeping precomputed outside the graph
# ---------------------------------------------------------------------------


@dataclass
class PackedUnits:
    """Batch of unit index rows flattened for gather/segment kernels."""

    kind: str
    n_words: int
    flat: np.ndarray  # morphsum/sylconcat: all unit ids; charcnn: char ids [B*L]
    seg_ids: np.ndarray | None = None  # morphsum: word id per unit row
    slot_mask: np.ndarray | None = None  # sylconcat: [B*slots x 1] 0/1
    valid_len: np.ndarray | None = None  # charcnn: non-pad prefix length per word
    seq_len: int = 0  # charcnn: padded length L


def pack_units(
    unit_rows: list[np.ndarray], config: EmbedderConfig, subvocab: SubwordVocabulary | None
) -> PackedUnits:
    """Flatten variable-length unit rows for one batch of words."""
    b = len(unit_rows)
    if config.kind == "morphsum":
        flat = np.concatenate(unit_rows)
        seg = np.repeat(np.arange(b), [len(r) for r in unit_rows])
        return PackedUnits(kind="morphsum", n_words=b, flat=flat, seg_ids=seg)
    if config.kind == "sylconcat":
        slots = config.syllable_slots
        idx = np.zeros((b, slots), dtype=np.int64)
        mask = np.zeros((b, slots), dtype=np.float64)
        for i, row in enumerate(unit_rows):
            k = min(len(row), slots)  # overflow syllables truncated
            idx[i, :k] = row[:k]
            mask[i, :k] = 1.0
        return PackedUnits(
            kind="sylconcat",
            n_words=b,
            flat=idx.reshape(-1),
            slot_mask=mask.reshape(-1, 1),
        )
    if config.kind == "charcnn":
        if subvocab is None:
            raise ConfigError("charcnn packing needs the subword vocabulary")
        seq_len = len(unit_rows[0])
        chars = np.stack(unit_rows)
        if chars.shape != (b, seq_len):
            raise NumericError("charcnn rows must share one padded length")
        valid = (chars != subvocab.pad_index).sum(axis=1)
        return PackedUnits(
            kind="charcnn",
            n_words=b,
            flat=chars.reshape(-1),
            valid_len=valid,
            seq_len=seq_len,
        )
    raise ConfigError(f"cannot pack units for kind {config.kind!r}")


def _charcnn_compose(stack, registry, packed, gate_trap):
    cfg = stack.config
    b, seq_len = packed.n_words, packed.seq_len
    table = registry[f"{stack.prefix}.emb.table"].tensor
    grid = nc.row_gather(table, packed.flat)  # [B*L x d_c]
    pooled = []
    for w in cfg.filter_widths:
        n_pos = seq_len - w + 1
        if n_pos <= 0:
            raise NumericError(
                f"padded length {seq_len} shorter than filter width {w}"
            )
        base = (np.arange(b)[:, None] * seq_len + np.arange(n_pos)[None, :]).reshape(-1)
        window_rows = (base[:, None] + np.arange(w)[None, :]).reshape(-1)
        windows = nc.reshape(nc.row_gather(grid, window_rows), (b * n_pos, w * cfg.d_s))
        conv_w = registry[f"{stack.prefix}.cnn.w{w}"].tensor
        conv_b = registry[f"{stack.prefix}.cnn.b{w}"].tensor
        feat = nc.tanh(nc.add(nc.matmul(windows, conv_w), conv_b))
        # A window is pooled iff it fits inside the word's non-pad prefix;
        # the left-aligned window always stays so short words are defined.
        pos = np.tile(np.arange(n_pos), b)
        fits = pos + w <= np.repeat(packed.valid_len, n_pos)
        keep = (fits | (pos == 0)).astype(feat.dtype)
        feat = nc.add_const(feat, ((1.0 - keep) * nc.NEG_LARGE)[:, None])
        pooled.append(nc.segment_max(feat, np.repeat(np.arange(b), n_pos), b))
    x = nc.concat(pooled, axis=1)
    if cfg.needs_projection:
        pw = registry[f"{stack.prefix}.cnn.proj_w"].tensor
        pb = registry[f"{stack.prefix}.cnn.proj_b"].tensor
        x = nc.add(nc.matmul(x, pw), pb)
    return x


def embed_packed(
    stack: EmbedderStack,
    registry: ParamRegistry,
    packed: PackedUnits,
    gate_trap: list | None = None,
) -> Tensor:
    """Embed a packed batch of words: [n_words x output_dim]."""
    cfg = stack.config
    table = registry[f"{stack.prefix}.emb.table"].tensor
    if cfg.kind == "word":
        return nc.row_gather(table, packed.flat)
    if cfg.kind == "morphsum":
        rows = nc.row_gather(table, packed.flat)
        x = nc.segment_sum(rows, packed.seg_ids, packed.n_words)
    elif cfg.kind == "sylconcat":
        rows = nc.row_gather(table, packed.flat)
        rows = nc.mul_const(rows, packed.slot_mask.astype(table.dtype))
        x = nc.reshape(rows, (packed.n_words, cfg.syllable_slots * cfg.d_s))
        if cfg.needs_projection:
            pw = registry[f"{stack.prefix}.proj.w"].tensor
            pb = registry[f"{stack.prefix}.proj.b"].tensor
            x = nc.add(nc.matmul(x, pw), pb)
    elif cfg.kind == "charcnn":
        x = _charcnn_compose(stack, registry, packed, gate_trap)
    else:
        raise ConfigError(f"cannot embed kind {cfg.kind!r}")
    return _run_highways(stack, registry, x, gate_trap)


def embed_words(
    stack: EmbedderStack,
    registry: ParamRegistry,
    word_ids: np.ndarray,
    seg: Segmentation | None,
    subvocab: SubwordVocabulary | None,
    gate_trap: list | None = None,
) -> Tensor:
    """Embed vocabulary words by index."""
    word_ids = np.asarray(word_ids, dtype=np.int64)
    if stack.kind == "word":
        packed = PackedUnits(kind="word", n_words=len(word_ids), flat=word_ids)
    else:
        packed = pack_units([seg.units[w] for w in word_ids], stack.config, subvocab)
    return embed_packed(stack, registry, packed, gate_trap)


def build_output_matrix(
    stack: EmbedderStack,
    registry: ParamRegistry,
    packed_vocab: PackedUnits,
    gate_trap: list | None = None,
) -> Tensor:
    """Run the output-side stack over the whole vocabulary (one row per word)."""
    return embed_packed(stack, registry, packed_vocab, gate_trap)


class WordVectorCache:
    """Frozen full-vocabulary embedding matrix, invalidated by param updates."""

    def __init__(self):
        self.matrix: np.ndarray | None = None
        self.built_version: int = -1

    def dirty(self, registry: ParamRegistry) -> bool:
        return self.matrix is None or self.built_version != registry.version

    def get(
        self,
        stack: EmbedderStack,
        registry: ParamRegistry,
        packed_vocab: PackedUnits,
    ) -> np.ndarray:
        if self.dirty(registry):
            with nc.no_grad():
                self.matrix = embed_packed(stack, registry, packed_vocab).data
            self.built_version = registry.version
        return self.matrix
