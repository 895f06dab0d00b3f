"""Reuse of input-embedding parameters on the output side.

The output projection of a subword-softmax model is generated by a second
copy of the embedding network; any subset of its layers can be re-bound
to the input network's storage instead of owning fresh parameters.  Named
modes cover the standard choices:

* ``re``    reuse the subword embedding table only (layer 0),
* ``rw``    reuse the composition/highway weights only (layers 1..n),
* ``rerw``  reuse everything,
* ``none``  fully independent output network,
* ``custom`` an explicit per-layer mask.

For word-level softmax models only the embedding-table tie is meaningful
(input and output word embeddings transposed into each other); masks over
deeper layers are ignored there.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from sublm.embedders import EmbedderStack
from sublm.errors import ConfigError
from sublm.numcore import ParamRegistry

REUSE_MODES = ("none", "re", "rw", "rerw", "custom")


@dataclass
class TyingConfig:
    """Which output-stack layers share storage with the input stack."""

    mode: str = "none"
    custom_layers: tuple[str, ...] = ()  # layer names, for mode="custom"

    def __post_init__(self):
        if self.mode not in REUSE_MODES:
            raise ConfigError(f"unknown reuse mode {self.mode!r}")
        if self.mode == "custom" and not self.custom_layers:
            raise ConfigError("custom tying needs an explicit layer list")

    def mask_for(self, layer_names: list[str]) -> list[bool]:
        """Per-layer tie mask aligned with a stack's bottom-up layer list."""
        if self.mode == "none":
            return [False] * len(layer_names)
        if self.mode == "re":
            return [name == "emb" for name in layer_names]
        if self.mode == "rw":
            return [name != "emb" for name in layer_names]
        if self.mode == "rerw":
            return [True] * len(layer_names)
        unknown = set(self.custom_layers) - set(layer_names)
        if unknown:
            raise ConfigError(f"custom tie names unknown layers: {sorted(unknown)}")
        return [name in self.custom_layers for name in layer_names]


@dataclass
class TyingReport:
    """Slot-level vs storage-level parameter counts of one model."""

    total_params: int
    unique_params: int
    tied_layer_names: list[str] = field(default_factory=list)

    @property
    def unique_millions(self) -> float:
        return self.unique_params / 1e6


def apply_tying(
    registry: ParamRegistry,
    input_stack: EmbedderStack,
    output_stack: EmbedderStack,
    tying: TyingConfig,
) -> list[str]:
    """Re-bind masked output layers onto the input stack's storages.

    The stacks must be structurally identical.  Returns the tied layer
    names.  Must run before initialization so untied layers keep their own
    independently initialized storage.
    """
    if input_stack.layer_names != output_stack.layer_names:
        raise ConfigError(
            f"cannot tie structurally different stacks: "
            f"{input_stack.layer_names} vs {output_stack.layer_names}"
        )
    mask = tying.mask_for(input_stack.layer_names)
    tied = []
    for (layer, in_slots), m in zip(input_stack.layers, mask):
        if not m:
            continue
        out_slots = output_stack.layer_slots(layer)
        for src, dst in zip(in_slots, out_slots):
            registry.rebind(dst, src)
        tied.append(layer)
    return tied


def is_bottom_up_consecutive(mask: tuple[bool, ...]) -> bool:
    """True when the tied layers form a nonempty prefix of the layer list."""
    k = sum(mask)
    return k > 0 and all(mask[:k]) and not any(mask[k:])


def enumerate_masks(n_layers: int) -> list[tuple[bool, ...]]:
    """All 2^n per-layer masks, layer 0 (the embedding table) first."""
    if n_layers < 1:
        raise ConfigError("need at least one layer")
    return [
        tuple(reversed(bits))
        for bits in itertools.product((False, True), repeat=n_layers)
    ]


def enumerate_bottom_up(n_layers: int) -> list[tuple[bool, ...]]:
    """The standard sweep list: every mask except the two degenerate ones.

    Excluded are the all-untied mask and the mask that ties only the
    embedding table, leaving 2^n - 2 configurations.
    """
    emb_only = (True,) + (False,) * (n_layers - 1)
    return [
        m for m in enumerate_masks(n_layers) if any(m) and m != emb_only
    ]


def count_parameters(registry: ParamRegistry, tied_layers: list[str] | None = None) -> TyingReport:
    """Slot-total and unique-storage parameter counts."""
    return TyingReport(
        total_params=registry.total_param_count(),
        unique_params=registry.unique_param_count(),
        tied_layer_names=list(tied_layers or []),
    )
