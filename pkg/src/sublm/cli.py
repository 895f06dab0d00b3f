"""Command-line surface: train, eval, segment, sweep-tying, analyze, count-params.

Configuration merges three layers (command-line flags over key=value
config file over built-in presets).  Every run directory gets a
`manifest.json` (argv, resolved config, seed, package version) so results
can be replayed bit-identically.  Analysis commands write delimited
reports plus rendered PNG figures side by side.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

import sublm
from sublm import numcore as nc
from sublm.analysis import (
    gate_kde,
    load_ttr_fixture,
    nearest_neighbors,
    oov_transfer,
    param_report,
    pca_curve,
    ttr_fit,
    TTRPoint,
)
from sublm.configio import KV, read_kv, write_kv
from sublm.corpus import Vocabulary, build_word_vocab, corpus_stats, encode, load_corpus
from sublm.embedders import EmbedderConfig
from sublm.errors import ConfigError, DataError, NumericError
from sublm.hyphenation import load_english_patterns, load_patterns
from sublm.morphs import model_from_analyses, train_morph_model
from sublm.rnnlm import ModelConfig, build_model, build_registry, preset_embedder
from sublm.segmentation import (
    CharSegmenter,
    FixedSegmenter,
    MorphSegmenter,
    SyllableSegmenter,
    build_subword_vocab,
    load_segmentation_file,
    save_segmentation_file,
)
from sublm.trainer import TrainSchedule, default_schedule, evaluate_ppl, init_parameters, train
from sublm.tying import enumerate_bottom_up, enumerate_masks, is_bottom_up_consecutive

STACK_LAYERS = {"morph": ["emb", "hw1", "hw2"], "syl": ["emb", "hw1", "hw2"],
                "char": ["emb", "cnn", "hw1", "hw2"]}


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per our exit codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# configuration resolution
# ---------------------------------------------------------------------------


def _merged_kv(args, cli_keys: dict) -> KV:
    layers = []
    if getattr(args, "config", None):
        layers.append(read_kv(args.config))
    layers.append({k: v for k, v in cli_keys.items() if v is not None})
    return KV(*layers)


def resolve_model_config(kv: KV, n_units_hint: int = 0) -> ModelConfig:
    units = kv.get("units")
    if units is None:
        raise ConfigError("units is required (word|char|syl|morph)")
    size = kv.get("size", "small")
    softmax = kv.get("softmax") or ("word" if units == "word" else "subword")
    reuse = kv.get("reuse", "none")
    tie = kv.get_strs("tie", ())
    if tie:
        reuse = "custom"

    if size in ("small", "medium"):
        base = dataclasses.asdict(preset_embedder(units, size, softmax))
        d_lm = 200 if size == "small" else 650
    else:
        base = {"kind": {"word": "word", "char": "charcnn", "syl": "sylconcat",
                         "morph": "morphsum"}[units]}
        d_lm = kv.get_int("d_lm")
        if d_lm is None:
            raise ConfigError("custom size needs d_lm")
    d_lm = kv.get_int("d_lm", d_lm)

    for key, getter in [
        ("d_s", kv.get_int), ("d_hw", kv.get_int),
        ("syllable_slots", kv.get_int), ("max_word_len", kv.get_int),
    ]:
        value = getter(key)
        if value is not None:
            base[key] = value
    widths = kv.get_ints("filter_widths")
    maps = kv.get_ints("feature_maps")
    if widths is not None:
        base["filter_widths"] = widths
    if maps is not None:
        base["feature_maps"] = maps
    if units == "word":
        base.setdefault("d_s", d_lm)
    base = {k: (tuple(v) if isinstance(v, list) else v) for k, v in base.items()}
    embedder = EmbedderConfig(**base)
    return ModelConfig(
        units=units,
        d_lm=d_lm,
        embedder=embedder,
        softmax=softmax,
        reuse=reuse,
        tie_layers=tie,
        n_lstm_layers=kv.get_int("n_lstm_layers", 2),
        size=size,
    )


def resolve_schedule(kv: KV, config: ModelConfig) -> TrainSchedule:
    schedule = default_schedule(config, kv.get("dataset", "ptb"))
    mapping = {
        "lr": ("initial_lr", kv.get_float),
        "decay_start": ("decay_start_epoch", kv.get_int),
        "decay_rate": ("decay_rate", kv.get_float),
        "epochs": ("epochs", kv.get_int),
        "steps": ("bptt_steps", kv.get_int),
        "batch_size": ("batch_size", kv.get_int),
        "clip_norm": ("clip_norm", kv.get_float),
        "dropout": ("dropout_rate", kv.get_float),
        "init_range": ("init_range", kv.get_float),
        "seed": ("seed", kv.get_int),
        "sampled_fraction": ("sampled_fraction", kv.get_float),
    }
    values = dataclasses.asdict(schedule)
    for key, (attr, getter) in mapping.items():
        v = getter(key)
        if v is not None:
            values[attr] = v
    values["keep_all_checkpoints"] = kv.get_bool("keep_all_checkpoints", False)
    return TrainSchedule(**values)


def _make_segmenter(units: str, kv: KV, word_freqs: dict[str, int] | None):
    """Segmenter for fresh training (possibly from an injected file)."""
    seg_file = kv.get("segmentation_file")
    if units == "char":
        return CharSegmenter(kv.get_int("max_word_len"))
    if seg_file:
        kind = {"syl": "syllable", "morph": "morph"}[units]
        return load_segmentation_file(seg_file, kind)
    if units == "syl":
        patterns_path = kv.get("patterns")
        patterns = load_patterns(patterns_path) if patterns_path else load_english_patterns()
        return SyllableSegmenter(patterns)
    if units == "morph":
        if not word_freqs:
            raise ConfigError("morph segmentation needs training word frequencies")
        model = train_morph_model(word_freqs, max_passes=kv.get_int("morph_passes", 10))
        return MorphSegmenter(model)
    raise ConfigError(f"no segmenter for units {units!r}")


def _load_split(data_dir: Path, split: str, required: bool = True):
    path = data_dir / f"{split}.txt"
    if not path.exists():
        if required:
            raise DataError(f"missing {split} split: {path}")
        return None
    return load_corpus(path, split)


def prepare_data(data_dir: str | Path, kv: KV):
    """Corpus, vocabulary and subword structures for one dataset dir."""
    data_dir = Path(data_dir)
    train_tokens = _load_split(data_dir, "train")
    valid_tokens = _load_split(data_dir, "valid")
    test_tokens = _load_split(data_dir, "test", required=False)
    vocab = build_word_vocab(train_tokens, min_count=kv.get_int("min_count", 1))
    units = kv.get("units")
    if units is None:
        raise ConfigError("units is required (word|char|syl|morph)")
    subvocab = seg = segmenter = None
    if units != "word":
        freqs = {w: vocab.counts.get(w, 1) for w in vocab.word_of}
        segmenter = _make_segmenter(units, kv, freqs)
        subvocab, seg = build_subword_vocab(vocab, segmenter)
    streams = {
        "train": encode(train_tokens, vocab),
        "valid": encode(valid_tokens, vocab),
    }
    if test_tokens:
        streams["test"] = encode(test_tokens, vocab)
    return vocab, streams, subvocab, seg, segmenter, {"test_tokens": test_tokens}


def write_manifest(out_dir: Path, args_ns, extra: dict) -> None:
    manifest = {
        "command": sys.argv[1:] if sys.argv else [],
        "resolved": extra,
        "version": sublm.__version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, default=str), encoding="utf-8"
    )


def _config_echo(config: ModelConfig, schedule: TrainSchedule | None) -> dict:
    echo = {"model": dataclasses.asdict(config)}
    if schedule is not None:
        echo["schedule"] = dataclasses.asdict(schedule)
    return echo


# ---------------------------------------------------------------------------
# run reconstruction (eval / analyze)
# ---------------------------------------------------------------------------


def rebuild_run(model_path: str | Path, dtype=np.float32):
    """Rebuild a trained model from a checkpoint and its run directory."""
    model_path = Path(model_path)
    run_dir = model_path.parent
    loaded, echo = nc.load_checkpoint(model_path, dtype=dtype)
    del loaded  # only needed the header here; restore happens below
    model_echo = dict(echo["model"])
    emb = {k: (tuple(v) if isinstance(v, list) else v) for k, v in model_echo["embedder"].items()}
    config = ModelConfig(
        units=model_echo["units"],
        d_lm=model_echo["d_lm"],
        embedder=EmbedderConfig(**emb),
        softmax=model_echo["softmax"],
        reuse=model_echo["reuse"],
        tie_layers=tuple(model_echo.get("tie_layers", ())),
        n_lstm_layers=model_echo.get("n_lstm_layers", 2),
        size=model_echo.get("size", "custom"),
    )
    vocab_path = run_dir / "vocab.tsv"
    if not vocab_path.exists():
        raise DataError(f"run directory is missing vocab.tsv next to {model_path}")
    vocab = Vocabulary.load(vocab_path)

    subvocab = seg = segmenter = None
    if config.units != "word":
        if config.units == "char":
            segmenter = CharSegmenter(config.embedder.max_word_len)
        else:
            fixed = load_segmentation_file(
                run_dir / "segmentation.tsv",
                {"syl": "syllable", "morph": "morph"}[config.units],
            )
            if config.units == "morph":
                freqs = {w: vocab.counts.get(w, 1) for w in vocab.word_of}
                segmenter = MorphSegmenter(model_from_analyses(fixed.mapping, freqs))
            elif (run_dir / "patterns.txt").exists():
                segmenter = SyllableSegmenter(load_patterns(run_dir / "patterns.txt"))
            else:
                segmenter = fixed
        subvocab, seg = build_subword_vocab(vocab, segmenter)
    model = build_model(config, vocab, subvocab, seg, segmenter=segmenter, dtype=dtype)
    nc.restore_checkpoint(model_path, model.registry)
    return model, echo


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    kv = _merged_kv(args, {
        "units": args.units, "reuse": args.reuse, "tie": args.tie, "size": args.size,
        "softmax": args.softmax, "epochs": args.epochs, "seed": args.seed,
        "lr": args.lr, "batch_size": args.batch_size, "steps": args.steps,
        "dropout": args.dropout, "sampled_fraction": args.sampled_fraction,
        "patterns": args.patterns, "segmentation_file": args.segmentation,
        "dataset": args.dataset,
    })
    vocab, streams, subvocab, seg, segmenter, _ = prepare_data(args.data, kv)
    if kv.get("units") == "char" and kv.get_int("max_word_len") is None:
        kv.values["max_word_len"] = str(len(seg.units[0]))
    config = resolve_model_config(kv)
    schedule = resolve_schedule(kv, config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.tsv")
    if config.units != "word":
        with open(out_dir / "subword_vocab.tsv", "w", encoding="utf-8") as fh:
            for unit in subvocab.unit_of:
                fh.write(unit + "\n")
        if config.units in ("syl", "morph"):
            save_segmentation_file(out_dir / "segmentation.tsv", vocab, segmenter)
        if config.units == "syl":
            src = kv.get("patterns")
            if src:
                shutil.copyfile(src, out_dir / "patterns.txt")
            else:
                from importlib import resources

                ref = resources.files("sublm").joinpath("data/hyphen-en.txt")
                (out_dir / "patterns.txt").write_bytes(ref.read_bytes())

    model = build_model(config, vocab, subvocab, seg, segmenter=segmenter)
    init_parameters(model, schedule)
    echo = _config_echo(config, schedule)
    write_kv(out_dir / "config.kv", kv.values)
    write_manifest(out_dir, args, {**echo, "seed": schedule.effective_seed()})

    stats = corpus_stats(streams["train"], vocab)
    print(f"corpus: T={stats['T']} |W|={stats['type_count']} TTR={stats['TTR']:.4g}")
    if subvocab is not None:
        print(f"subword units: {len(subvocab)}")
    print(f"parameters: {model.registry.unique_param_count() / 1e6:.2f}M unique "
          f"({model.registry.total_param_count() / 1e6:.2f}M before sharing)")

    result = train(
        model, streams["train"], streams["valid"], schedule,
        out_dir=out_dir, checkpoint_config=echo,
        log_callback=lambda r: print(
            f"epoch {r.epoch:3d} lr {r.lr:.4g} train_ppl {r.train_ppl:9.3f} "
            f"valid_ppl {r.valid_ppl:9.3f} ({r.wall_time:.1f}s)"
        ),
    )
    from sublm.plots import plot_training_log

    plot_training_log(result.log, out_dir / "training.png")
    print(f"best valid ppl {result.best_valid_ppl:.3f} at epoch {result.best_epoch}")
    if "test" in streams and result.best_checkpoint:
        nc.restore_checkpoint(result.best_checkpoint, model.registry)
        test_ppl = evaluate_ppl(model, streams["test"], schedule.batch_size, schedule.bptt_steps)
        print(f"test ppl {test_ppl:.3f}")
    return 0


def cmd_eval(args) -> int:
    model, echo = rebuild_run(args.model)
    tokens = _load_split(Path(args.data), args.split)
    stream = encode(tokens, model.vocab)
    sched = echo.get("schedule", {})
    batch = args.batch_size or sched.get("batch_size", 20)
    steps = args.steps or sched.get("bptt_steps", 35)
    ppl = evaluate_ppl(model, stream, batch, steps)
    print(f"{args.split} ppl {ppl:.3f}")
    return 0


def cmd_segment(args) -> int:
    kv = _merged_kv(args, {
        "units": args.units, "patterns": args.patterns,
        "morph_passes": args.morph_passes, "min_count": args.min_count,
    })
    path = Path(args.infile)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    freqs: dict[str, int] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "\t" in line:
            word, _, count = line.partition("\t")
            if word:
                freqs[word] = freqs.get(word, 0) + int(count or 1)
        else:
            for tok in line.split():
                freqs[tok] = freqs.get(tok, 0) + 1
    if not freqs:
        raise DataError(f"empty input: {path}")
    min_count = kv.get_int("min_count", 1)
    freqs = {w: c for w, c in freqs.items() if c >= min_count} or freqs
    segmenter = _make_segmenter(args.units, kv, freqs)
    units = set()
    with open(args.outfile, "w", encoding="utf-8") as fh:
        for word in sorted(freqs, key=lambda w: (-freqs[w], w)):
            parts = segmenter.segment_string(word)
            units.update(parts)
            fh.write(word + "\t" + " ".join(parts) + "\n")
    print(f"segmented {len(freqs)} words into {len(units)} distinct units -> {args.outfile}")
    return 0


def _sweep_worker(payload: dict):
    """Train one tying mask; runs in a separate process when jobs > 1."""
    kv = KV(payload["kv"])
    vocab, streams, subvocab, seg, segmenter, _ = prepare_data(payload["data"], kv)
    config = resolve_model_config(kv)
    schedule = resolve_schedule(kv, config)
    model = build_model(config, vocab, subvocab, seg, segmenter=segmenter)
    init_parameters(model, schedule)
    result = train(model, streams["train"], streams["valid"], schedule)
    return payload["mask"], result.best_valid_ppl


def cmd_sweep_tying(args) -> int:
    kv = _merged_kv(args, {
        "units": args.units, "size": args.size, "epochs": args.epochs,
        "seed": args.seed, "dataset": args.dataset,
    })
    units = kv.get("units")
    if units not in STACK_LAYERS:
        raise ConfigError("sweep-tying applies to subword units (char|syl|morph)")
    layers = STACK_LAYERS[units]
    n = len(layers)
    masks = enumerate_masks(n)
    standard = set(enumerate_bottom_up(n))

    vocab, streams, subvocab, seg, segmenter, _ = prepare_data(args.data, kv)
    if units == "char" and kv.get_int("max_word_len") is None:
        kv.values["max_word_len"] = str(len(seg.units[0]))

    rows = []
    for mask in masks:
        tie = tuple(name for name, m in zip(layers, mask) if m)
        mask_kv = dict(kv.values)
        if tie:
            mask_kv["tie"] = ",".join(tie)
            mask_kv["reuse"] = "custom"
        else:
            mask_kv.pop("tie", None)
            mask_kv["reuse"] = "none"
        config = resolve_model_config(KV(mask_kv))
        registry, _, _, _ = build_registry(config, len(vocab), len(subvocab))
        rows.append({
            "mask": mask,
            "tied_layers": "+".join(tie) if tie else "(none)",
            "in_standard_sweep": mask in standard,
            "bottom_up_prefix": is_bottom_up_consecutive(mask),
            "unique_params": registry.unique_param_count(),
            "kv": mask_kv,
            "valid_ppl": None,
        })

    if not args.enumerate_only:
        jobs = [
            {"kv": r["kv"], "data": str(args.data), "mask": r["mask"]}
            for r in rows
            if r["in_standard_sweep"] or args.all_masks
        ]
        if args.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = dict(pool.map(_sweep_worker, jobs))
        else:
            results = dict(_sweep_worker(j) for j in jobs)
        for r in rows:
            r["valid_ppl"] = results.get(r["mask"])
        rows.sort(key=lambda r: (r["valid_ppl"] is None, r["valid_ppl"] or 0.0))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, args, {"units": units, "layers": layers, "kv": kv.values})
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"tie_{name}" for name in layers]
            + ["tied_layers", "in_standard_sweep", "bottom_up_prefix", "unique_params", "valid_ppl"]
        )
        for r in rows:
            writer.writerow(
                [int(b) for b in r["mask"]]
                + [
                    r["tied_layers"],
                    int(r["in_standard_sweep"]),
                    int(r["bottom_up_prefix"]),
                    r["unique_params"],
                    "" if r["valid_ppl"] is None else f"{r['valid_ppl']:.3f}",
                ]
            )
    n_std = sum(1 for r in rows if r["in_standard_sweep"])
    print(f"enumerated {len(rows)} masks ({n_std} in the standard sweep) -> {csv_path}")
    return 0


def cmd_analyze(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = args.kind

    if kind == "params":
        units_list = (args.units or "word,morph").split(",")
        sizes = (args.sizes or "small,medium").split(",")
        kv = _merged_kv(args, {})
        n_words = args.word_vocab or kv.get_int("word_vocab")
        if not n_words:
            raise ConfigError("params report needs --word-vocab (or word_vocab in config)")
        n_units = {
            "char": args.char_vocab or kv.get_int("char_vocab", 51),
            "syl": args.syl_vocab or kv.get_int("syl_vocab", 0),
            "morph": args.morph_vocab or kv.get_int("subword_vocab", 0),
        }
        rows = param_report(units_list, sizes, ["none", "re", "rw", "rerw"], n_words, n_units)
        path = out_dir / "params.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["units", "size", "reuse", "unique_params", "millions"])
            for r in rows:
                writer.writerow([r.units, r.size, r.reuse, r.report.unique_params,
                                 f"{r.millions:.1f}"])
                print(f"{r.units:6s} {r.size:7s} {r.reuse:5s} {r.millions:5.1f}M")
        write_manifest(out_dir, args, {"kind": kind})
        return 0

    if kind == "ttr":
        points = (
            load_ttr_fixture() if not args.fixture else _read_ttr_csv(args.fixture)
        )
        fit = ttr_fit(points)
        path = out_dir / "ttr_points.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "ttr", "delta_ppl"])
            for p in points:
                writer.writerow([p.label, f"{p.ttr:.6f}", f"{p.delta_ppl:.2f}"])
        (out_dir / "ttr_fit.json").write_text(json.dumps(fit, indent=2))
        from sublm.plots import plot_ttr_scatter

        plot_ttr_scatter(
            np.array([p.ttr for p in points]),
            np.array([p.delta_ppl for p in points]),
            fit["slope"],
            out_dir / "ttr.png",
        )
        print(f"slope {fit['slope']:.1f}  pearson_r {fit['pearson_r']:.3f}  n {fit['n']}")
        write_manifest(out_dir, args, {"kind": kind, "fit": fit})
        return 0

    if not args.model:
        raise ConfigError(f"analyze --kind {kind} needs --model")
    model, echo = rebuild_run(args.model)

    if kind == "neighbors":
        words = (args.words or "").split(",")
        words = [w for w in words if w]
        if not words:
            raise ConfigError("neighbors analysis needs --words w1,w2,...")
        sides = ["input", "output"] if args.side == "both" else [args.side]
        path = out_dir / "neighbors.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query", "side", "rank", "neighbor", "cosine", "note"])
            for word in words:
                for side in sides:
                    rep = nearest_neighbors(model, word, side, k=args.k)
                    if not rep.available:
                        writer.writerow([word, side, "", "", "", f"not available: {rep.reason}"])
                        print(f"{word} ({side}): not available ({rep.reason})")
                        continue
                    names = ", ".join(w for w, _ in rep.neighbors)
                    print(f"{word} ({side}): {names}")
                    for rank, (w, sim) in enumerate(rep.neighbors, 1):
                        writer.writerow([word, side, rank, w, f"{sim:.4f}", ""])
        write_manifest(out_dir, args, {"kind": kind, "words": words})
        return 0

    if kind == "pca":
        curves = {}
        rows = [("input", model.input_matrix_frozen()), ("output", model.output_matrix_frozen())]
        path = out_dir / "pca.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["side", "components", "retained"])
            for side, matrix in rows:
                curve = pca_curve(matrix)
                curves[side] = (curve.components, curve.retained)
                for k, v in zip(curve.components, curve.retained):
                    writer.writerow([side, k, f"{v:.6f}"])
        from sublm.plots import plot_pca_curves

        plot_pca_curves(curves, out_dir / "pca.png")
        write_manifest(out_dir, args, {"kind": kind})
        print(f"wrote {path}")
        return 0

    if kind == "kde":
        if model.config.units == "word":
            raise ConfigError("gate analysis applies to subword models")
        rng = np.random.default_rng(args.seed or 0)
        n = min(args.sample, model.n_words)
        word_ids = rng.choice(model.n_words, size=n, replace=False)
        sides = ["input"]
        if "hw1" not in model.tied_layers:
            sides.append("output")
        series = {}
        path = out_dir / "gate_kde.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["side", "gate_value", "density"])
            for side in sides:
                dens = gate_kde(model, word_ids, side)
                label = "tied" if len(sides) == 1 else side
                series[label] = (dens.grid, dens.density)
                for g, d in zip(dens.grid, dens.density):
                    writer.writerow([side, f"{g:.5f}", f"{d:.6f}"])
        from sublm.plots import plot_gate_density

        plot_gate_density(series, out_dir / "gate_kde.png")
        write_manifest(out_dir, args, {"kind": kind, "sample": n})
        print(f"wrote {path}")
        return 0

    if kind == "oov":
        if not args.data:
            raise ConfigError("oov analysis needs --data (the foreign corpus)")
        tokens = _load_split(Path(args.data), args.split)
        report = oov_transfer(model, tokens)
        payload = dataclasses.asdict(report)
        (out_dir / "oov_transfer.json").write_text(json.dumps(payload, indent=2))
        print(
            f"new OOV tokens {report.new_oov_tokens} (types {report.new_oov_types}); "
            f"ppl {report.ppl:.2f} over {report.eval_vocab_size} eval words"
        )
        write_manifest(out_dir, args, {"kind": kind, **payload})
        return 0

    raise ConfigError(f"unknown analysis kind {kind!r}")


def _read_ttr_csv(path: str | Path) -> list[TTRPoint]:
    points = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            if "ttr" in row:
                points.append(TTRPoint(row.get("label", ""), float(row["ttr"]),
                                       float(row["delta_ppl"])))
            else:
                ttr = float(row["word_types"]) / float(row["train_tokens"])
                delta = float(row["ppl_word_reuse"]) - float(row["ppl_morph_reuse"])
                points.append(TTRPoint(row.get("label", ""), ttr, delta))
    if not points:
        raise DataError(f"no points in {path}")
    return points


def cmd_count_params(args) -> int:
    kv = _merged_kv(args, {
        "units": args.units, "size": args.size, "reuse": args.reuse, "tie": args.tie,
        "softmax": args.softmax,
    })
    n_words = args.word_vocab or kv.get_int("word_vocab")
    if not n_words:
        raise ConfigError("count-params needs word_vocab (config) or --word-vocab")
    n_units = args.subword_vocab or kv.get_int("subword_vocab", 0)
    config = resolve_model_config(kv)
    registry, _, _, tied = build_registry(config, n_words, n_units)
    unique = registry.unique_param_count()
    print(f"{config.units} {config.size} reuse={config.reuse}: "
          f"{unique / 1e6:.1f}M unique parameters "
          f"({registry.total_param_count() / 1e6:.1f}M before sharing; "
          f"tied layers: {', '.join(tied) if tied else 'none'})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def make_parser() -> _Parser:
    parser = _Parser(prog="sublm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file")

    p = sub.add_parser("train", help="train a language model")
    add_common(p)
    p.add_argument("--data", required=True, help="dir with train.txt/valid.txt[/test.txt]")
    p.add_argument("--units", choices=["word", "char", "syl", "morph"])
    p.add_argument("--reuse", choices=["none", "re", "rw", "rerw"])
    p.add_argument("--tie", help="custom tie mask, e.g. emb,hw1")
    p.add_argument("--size", choices=["small", "medium", "custom"])
    p.add_argument("--softmax", choices=["word", "subword"])
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--dataset", help="dropout preset family: ptb|wikitext2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--steps", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--sampled-fraction", type=float, dest="sampled_fraction")
    p.add_argument("--patterns", help="TeX hyphenation pattern file (syl units)")
    p.add_argument("--segmentation", help="inject an external segmentation file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a data split")
    p.add_argument("--model", required=True, help="checkpoint path (run dir sibling files needed)")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="write a word segmentation file")
    add_common(p)
    p.add_argument("--units", required=True, choices=["syl", "morph"])
    p.add_argument("--in", dest="infile", required=True,
                   help="corpus or word<TAB>freq list")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--patterns")
    p.add_argument("--morph-passes", type=int, dest="morph_passes")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sweep-tying", help="enumerate (and optionally train) tie masks")
    add_common(p)
    p.add_argument("--units", required=True, choices=["char", "syl", "morph"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="sweep")
    p.add_argument("--size", choices=["small", "medium", "custom"])
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--enumerate-only", action="store_true", dest="enumerate_only")
    p.add_argument("--all-masks", action="store_true", dest="all_masks",
                   help="also train the two degenerate masks")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_tying)

    p = sub.add_parser("analyze", help="diagnostics: neighbors|pca|kde|ttr|oov|params")
    add_common(p)
    p.add_argument("--kind", required=True,
                   choices=["neighbors", "pca", "kde", "ttr", "oov", "params"])
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="analysis")
    p.add_argument("--words", help="comma list for neighbors")
    p.add_argument("--side", default="input", choices=["input", "output", "both"])
    p.add_argument("-k", type=int, default=4)
    p.add_argument("--sample", type=int, default=500, help="word sample size for kde")
    p.add_argument("--seed", type=int)
    p.add_argument("--fixture", help="ttr points csv (default: bundled)")
    p.add_argument("--word-vocab", type=int, dest="word_vocab")
    p.add_argument("--morph-vocab", type=int, dest="morph_vocab")
    p.add_argument("--syl-vocab", type=int, dest="syl_vocab")
    p.add_argument("--char-vocab", type=int, dest="char_vocab")
    p.add_argument("--units", help="comma list for params report")
    p.add_argument("--sizes", help="comma list for params report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("count-params", help="parameter count from a config, no data needed")
    add_common(p)
    p.add_argument("--units", choices=["word", "char", "syl", "morph"])
    p.add_argument("--size", choices=["small", "medium", "custom"])
    p.add_argument("--reuse", choices=["none", "re", "rw", "rerw"])
    p.add_argument("--tie")
    p.add_argument("--softmax", choices=["word", "subword"])
    p.add_argument("--word-vocab", type=int, dest="word_vocab")
    p.add_argument("--subword-vocab", type=int, dest="subword_vocab")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
