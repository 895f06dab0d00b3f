"""Optimization recipe: init, LR schedule, variational dropout, SGD loop.

Plain SGD over truncated-BPTT windows with gradients normalized by batch
size and clipped at a global-norm threshold.  The learning rate is held
at its initial value until a fixed epoch, then decayed geometrically.
Dropout masks are resampled once per window and reused at every time step
inside it (the variational contract).  Recurrent state carries across
windows within an epoch and resets between epochs.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sublm import numcore as nc
from sublm.corpus import EncodedStream, batchify
from sublm.errors import NumericError
from sublm.rnnlm import LanguageModel, LMState, forward_window, sample_masks

SEED_ENV_VAR = "SUBLM_SEED"


@dataclass
class TrainSchedule:
    """Hyperparameters of one training run.

    Published defaults: initial LR 1.0 for small word-level models, 0.5
    for the character CNN, 0.7 otherwise; decay from epoch 5 (small word),
    12 (character CNN) or 10 (others) at rate 0.9; init range 0.1 small /
    0.05 medium; dropout 0.3/0.5 (small/medium).
    """

    initial_lr: float = 1.0
    decay_start_epoch: int = 5
    decay_rate: float = 0.9
    epochs: int = 70
    bptt_steps: int = 35
    batch_size: int = 20
    clip_norm: float = 5.0
    dropout_rate: float = 0.0
    init_range: float = 0.1
    forget_bias: float = 1.0
    highway_gate_bias: float = -2.0
    seed: int = 0
    sampled_fraction: float = 0.0  # 0 disables sampled softmax
    keep_all_checkpoints: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay_rate <= 1.0:
            raise NumericError("decay_rate must be in (0, 1]")
        if self.initial_lr <= 0.0:
            raise NumericError("initial_lr must be positive")

    def effective_seed(self) -> int:
        env = os.environ.get(SEED_ENV_VAR)
        return int(env) if env else self.seed


def default_schedule(config, dataset: str = "ptb", **overrides) -> TrainSchedule:
    """Published hyperparameters for a model config on a dataset family."""
    small = config.size == "small"
    kind = config.embedder.kind
    if kind == "word" and small:
        lr, decay_start = 1.0, 5
    elif kind == "charcnn":
        lr, decay_start = 0.5, 12
    elif kind == "sylconcat" and not small and config.reuse in ("none", "rw"):
        lr, decay_start = 0.5, 10
    else:
        lr, decay_start = 0.7, 10
    dropout = {"ptb": (0.3, 0.5), "wikitext2": (0.2, 0.4)}.get(dataset, (0.3, 0.5))
    values = dict(
        initial_lr=lr,
        decay_start_epoch=decay_start,
        dropout_rate=dropout[0] if small else dropout[1],
        init_range=0.1 if small else 0.05,
    )
    values.update(overrides)
    return TrainSchedule(**values)


def lr_at(epoch: int, schedule: TrainSchedule) -> float:
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise NumericError(f"epochs are 1-based, got {epoch}")
    if epoch <= schedule.decay_start_epoch:
        return schedule.initial_lr
    return schedule.initial_lr * schedule.decay_rate ** (epoch - schedule.decay_start_epoch)


def init_parameters(model: LanguageModel, schedule: TrainSchedule) -> None:
    """Seeded uniform init with the two published bias exceptions.

    Tying must already be applied: each unique storage is drawn exactly
    once, in registration order, so a seed pins every weight bit-for-bit.
    LSTM forget-gate bias slices are set to `forget_bias` and highway
    transform-gate biases to `highway_gate_bias` after the uniform fill.
    """
    rng = np.random.default_rng(schedule.effective_seed())
    r = schedule.init_range
    for tensor in model.registry.unique_storages().values():
        tensor.data[...] = rng.uniform(-r, r, size=tensor.shape)
    d = model.config.d_lm
    for layer in range(model.config.n_lstm_layers):
        bias = model.registry[f"lstm.l{layer}.b"].tensor
        bias.data[d : 2 * d] = schedule.forget_bias
    for name, slot in model.registry.slots.items():
        if name.endswith(".gate_b"):
            slot.tensor.data[...] = schedule.highway_gate_bias
    model.registry.version += 1  # invalidate any frozen caches


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_ppl: float
    valid_ppl: float
    wall_time: float


@dataclass
class TrainResult:
    log: list[EpochRecord] = field(default_factory=list)
    best_valid_ppl: float = np.inf
    best_epoch: int = 0
    best_checkpoint: Path | None = None


def evaluate_ppl(
    model: LanguageModel,
    stream: EncodedStream,
    batch_size: int = 20,
    steps: int = 35,
) -> float:
    """exp(total NLL / tokens scored); dropout off, parameters frozen.

    Uses the standard contiguous batching, so trailing remainder tokens
    are not scored.  State carries across windows and starts at zero.
    """
    views = batchify(stream, batch_size, steps)
    state = LMState.zeros(
        model.config.n_lstm_layers, batch_size, model.config.d_lm, model.registry.dtype
    )
    total_nll = 0.0
    total_tokens = 0
    with nc.no_grad():
        for view in views:
            loss, state = forward_window(model, view.inputs, view.targets, state)
            total_nll += loss.item()
            total_tokens += view.inputs.size
    return float(np.exp(total_nll / total_tokens))


def train(
    model: LanguageModel,
    train_stream: EncodedStream,
    valid_stream: EncodedStream,
    schedule: TrainSchedule,
    out_dir: str | Path | None = None,
    checkpoint_config: dict | None = None,
    log_callback=None,
) -> TrainResult:
    """Run the full epoch loop; returns the log and best-checkpoint info.

    Aborts with NumericError on divergence (non-finite loss).  When
    `out_dir` is given, writes `log.csv`, a rolling `last.ckpt` and the
    best-validation `best.ckpt` (plus per-epoch files if requested).
    """
    rng = np.random.default_rng(schedule.effective_seed())
    views = batchify(train_stream, schedule.batch_size, schedule.bptt_steps)
    result = TrainResult()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    config_echo = checkpoint_config or {}

    for epoch in range(1, schedule.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(epoch, schedule)
        state = LMState.zeros(
            model.config.n_lstm_layers,
            schedule.batch_size,
            model.config.d_lm,
            model.registry.dtype,
        )
        total_nll = 0.0
        total_tokens = 0
        for view in views:
            masks = (
                sample_masks(
                    rng,
                    schedule.dropout_rate,
                    schedule.batch_size,
                    model.lstm_dims,
                    model.config.d_lm,
                )
                if schedule.dropout_rate > 0.0
                else None
            )
            try:
                loss, state = forward_window(
                    model,
                    view.inputs,
                    view.targets,
                    state,
                    masks=masks,
                    sampled_fraction=schedule.sampled_fraction,
                    rng=rng,
                )
            except NumericError as exc:
                raise NumericError(
                    f"diverged at epoch {epoch} (lr={lr:.4g}): {exc}"
                ) from exc
            nc.backward(loss)
            nc.clip_global_norm(model.registry, schedule.clip_norm, schedule.batch_size)
            nc.sgd_step(model.registry, lr)
            total_nll += loss.item()
            total_tokens += view.inputs.size

        train_ppl = float(np.exp(total_nll / total_tokens))
        valid_ppl = evaluate_ppl(
            model, valid_stream, schedule.batch_size, schedule.bptt_steps
        )
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_ppl=train_ppl,
            valid_ppl=valid_ppl,
            wall_time=time.perf_counter() - t0,
        )
        result.log.append(record)
        if log_callback is not None:
            log_callback(record)

        if out_dir is not None:
            nc.save_checkpoint(out_dir / "last.ckpt", model.registry, config_echo)
            if schedule.keep_all_checkpoints:
                nc.save_checkpoint(out_dir / f"epoch{epoch:03d}.ckpt", model.registry, config_echo)
        if valid_ppl < result.best_valid_ppl:
            result.best_valid_ppl = valid_ppl
            result.best_epoch = epoch
            if out_dir is not None:
                nc.save_checkpoint(out_dir / "best.ckpt", model.registry, config_echo)
                result.best_checkpoint = out_dir / "best.ckpt"
        if out_dir is not None:
            write_log(out_dir / "log.csv", result.log)
    return result


def write_log(path: str | Path, records: list[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_ppl", "valid_ppl", "wall_time"])
        for r in records:
            writer.writerow(
                [r.epoch, f"{r.lr:.6g}", f"{r.train_ppl:.4f}", f"{r.valid_ppl:.4f}", f"{r.wall_time:.2f}"]
            )


def probe_initial_lr(
    make_model,
    train_stream: EncodedStream,
    valid_stream: EncodedStream,
    schedule: TrainSchedule,
    start: float = 1.0,
    step: float = 0.1,
    floor: float = 0.1,
) -> float:
    """Pre-flight LR search: decrease from `start` until epoch one converges.

    `make_model` builds a fresh model (parameters are re-initialized per
    attempt).  "Converges" means the first epoch finishes with finite loss
    and a training perplexity below the uniform-predictor baseline.
    """
    lr = start
    while lr >= floor - 1e-9:
        model = make_model()
        trial = TrainSchedule(**{**asdict(schedule), "initial_lr": lr, "epochs": 1})
        init_parameters(model, trial)
        try:
            result = train(model, train_stream, valid_stream, trial)
            if result.log[0].train_ppl < model.n_words:
                return lr
        except NumericError:
            pass
        lr = round(lr - step, 10)
    raise NumericError("no learning rate converged during the probe")
