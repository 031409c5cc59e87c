"""Command-line pipeline driver.

Subcommands: gen-data, train-mt, gen-divergence, train-policy, simulate,
sweep, evaluate, curve. Exit codes: 0 success, 1 usage or configuration
error, 2 runtime or data error.

Everything lives under one output directory (``[paths] out_dir``):

    data/        train.src train.tgt train.align eval.src eval.tgt
                 eval.align vocab.txt
    models/      mt_full.pt mt_multipath.pt loss_<objective>.tsv
                 policy.pt policy_loss.tsv
    divergence/  matrices_<source>_<measure>_<split>.txt
                 supervision_<source>_<measure>_<split>.tsv
    runs/        sim_<policy>_<op>.tsv curve_<policy>_<quality>.tsv
                 threshold_al_<policy>.tsv evaluation.json
    manifests/   <command>.json

Configuration is a flat INI file whose sections mirror the library configs;
any key may be omitted (defaults below). Targeted flags (--lambda, --k,
--r-max, --measure, --seed, --out-dir, --workers) override the file. Every
command writes a manifest with the config hash and the content hashes of its
inputs and outputs, so identical manifests certify byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import torch

from . import __version__
from .corpus import (
    EOS_ID,
    SyntheticTaskConfig,
    Vocabulary,
    generate_synthetic_task,
    load_parallel_corpus,
    load_vocabulary,
    save_alignments,
    save_parallel_corpus,
    save_vocabulary,
)
from .divergence import (
    MEASURES,
    divergence_matrix,
    load_matrices,
    matrix_records,
    save_matrices,
    save_supervision,
    load_supervision,
    threshold_path,
)
from .metrics import EvaluationRun, average_lagging, build_curve, corpus_bleu, load_curve, save_curve
from .policy import (
    DapPolicyConfig,
    MatrixPolicy,
    WaitkPolicy,
    load_policy,
    save_policy,
    train_policy,
    waitk_g,
)
from .simulator import (
    SimulationLimits,
    SimulationLogRow,
    load_simulation_log,
    replay_path_nll,
    save_simulation_log,
    simulate,
)
from .translation import (
    SyntheticOracleModel,
    TinyModelConfig,
    corpus_nll,
    load_model,
    save_model,
    train_full_sentence,
    train_multipath_waitk,
)


class ConfigError(Exception):
    pass


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {"out_dir": "simtpol_out"},
    "task": {
        "vocab_size": "38",
        "min_len": "4",
        "max_len": "10",
        "num_pairs": "2000",
        "eval_pairs": "300",
        "seed": "0",
    },
    "model": {
        "embed_dim": "64",
        "hidden_dim": "128",
        "num_layers": "2",
        "num_heads": "4",
        "learning_rate": "1e-3",
        "epochs": "40",
        "batch_size": "64",
        "k_candidates": "1,3,5,7,9",
        "causal_source": "true",
        "seed": "0",
    },
    "policy": {
        "extra_decoder_layers": "1",
        "head_hidden_dim": "128",
        "loss_kind": "bce",
        "learning_rate": "1e-3",
        "epochs": "20",
        "batch_size": "16",
        "seed": "0",
        "base": "multipath",
    },
    "divergence": {
        "measure": "cosine",
        "source": "multipath",
        "split": "train",
        "limit": "0",
    },
    "sweep": {
        "lambdas": "0.05,0.1,0.2,0.4,0.7",
        "ks": "1,3,5,7,9",
        "r_max": "0",
        "policy": "learned",
        "quality": "bleu",
        "split": "eval",
    },
}


def load_config(config_path) -> dict[str, dict[str, str]]:
    cfg = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    if config_path is None:
        return cfg
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for sec in parser.sections():
        if sec not in cfg:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, value in parser.items(sec):
            if key not in cfg[sec]:
                raise ConfigError(f"unknown config key {key!r} in section [{sec}]")
            cfg[sec][key] = value
    return cfg


def apply_overrides(cfg, args) -> None:
    if getattr(args, "out_dir", None):
        cfg["paths"]["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        for sec in ("task", "model", "policy"):
            cfg[sec]["seed"] = str(args.seed)
    if getattr(args, "measure", None):
        cfg["divergence"]["measure"] = args.measure
    if getattr(args, "lam", None):
        cfg["sweep"]["lambdas"] = args.lam
    if getattr(args, "k", None):
        cfg["sweep"]["ks"] = args.k
    if getattr(args, "r_max", None) is not None:
        cfg["sweep"]["r_max"] = str(args.r_max)


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _cfg_int(cfg, sec, key, minimum=None) -> int:
    raw = cfg[sec][key]
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be an integer, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"[{sec}] {key} must be >= {minimum}, got {value}")
    return value


def _cfg_float(cfg, sec, key) -> float:
    raw = cfg[sec][key]
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be a number, got {raw!r}") from None


def _cfg_bool(cfg, sec, key) -> bool:
    raw = cfg[sec][key].strip().lower()
    if raw in ("true", "1", "yes", "on"):
        return True
    if raw in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"[{sec}] {key} must be a boolean, got {raw!r}")


def _cfg_choice(cfg, sec, key, choices) -> str:
    raw = cfg[sec][key].strip()
    if raw not in choices:
        raise ConfigError(f"[{sec}] {key} must be one of {sorted(choices)}, got {raw!r}")
    return raw


def _cfg_int_list(cfg, sec, key) -> list[int]:
    raw = cfg[sec][key]
    items = [piece.strip() for piece in raw.split(",") if piece.strip()]
    try:
        return [int(piece) for piece in items]
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be comma-separated integers, got {raw!r}") from None


def _cfg_float_list(cfg, sec, key) -> list[float]:
    raw = cfg[sec][key]
    items = [piece.strip() for piece in raw.split(",") if piece.strip()]
    try:
        return [float(piece) for piece in items]
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be comma-separated numbers, got {raw!r}") from None


def _lambdas(cfg) -> list[float]:
    values = _cfg_float_list(cfg, "sweep", "lambdas")
    if not values:
        raise ConfigError("[sweep] lambdas must be non-empty")
    if any(lam <= 0 for lam in values):
        raise ConfigError("[sweep] lambdas must be strictly positive")
    return values


def _r_max(cfg) -> int | None:
    value = _cfg_int(cfg, "sweep", "r_max", minimum=0)
    return None if value == 0 else value


def _checked(ctor, **kwargs):
    # dataclass validators raise ValueError; at the CLI boundary that is a
    # config problem (exit 1), not a runtime failure (exit 2)
    try:
        return ctor(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# layout helpers

def _dirs(cfg) -> dict[str, Path]:
    out = Path(cfg["paths"]["out_dir"])
    layout = {
        "out": out,
        "data": out / "data",
        "models": out / "models",
        "divergence": out / "divergence",
        "runs": out / "runs",
        "manifests": out / "manifests",
    }
    for path in layout.values():
        path.mkdir(parents=True, exist_ok=True)
    return layout


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {path} ({hint})")
    return path


def _matrices_path(dirs, cfg, split) -> Path:
    source = _cfg_choice(cfg, "divergence", "source", ("oracle", "full", "multipath"))
    measure = _cfg_choice(cfg, "divergence", "measure", MEASURES)
    return dirs["divergence"] / f"matrices_{source}_{measure}_{split}.txt"


def _supervision_path(dirs, cfg, split) -> Path:
    source = _cfg_choice(cfg, "divergence", "source", ("oracle", "full", "multipath"))
    measure = _cfg_choice(cfg, "divergence", "measure", MEASURES)
    return dirs["divergence"] / f"supervision_{source}_{measure}_{split}.tsv"


def _load_split(dirs, vocab, split):
    src = _require(dirs["data"] / f"{split}.src", "run gen-data first")
    tgt = _require(dirs["data"] / f"{split}.tgt", "run gen-data first")
    return load_parallel_corpus(src, tgt, vocab), [src, tgt]


def _load_vocab(dirs) -> tuple[Vocabulary, Path]:
    path = _require(dirs["data"] / "vocab.txt", "run gen-data first")
    return load_vocabulary(path), path


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(dirs, command, argv, cfg, inputs, outputs, started, workers=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": f"simtpol {__version__}",
        "config_hash": config_hash(cfg),
        "input_hashes": {str(p): _sha256_file(Path(p)) for p in inputs},
        "output_hashes": {str(p): _sha256_file(Path(p)) for p in outputs},
        "started_at": started,
        "finished_at": _now(),
        "workers": workers,
    }
    path = dirs["manifests"] / f"{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _parallel_map(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_loss_log(path, losses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\n")
        for epoch, loss in enumerate(losses, start=1):
            fh.write(f"{epoch}\t{loss:.17g}\n")


# subcommands

def cmd_gen_data(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    num_train = _cfg_int(cfg, "task", "num_pairs", minimum=1)
    num_eval = _cfg_int(cfg, "task", "eval_pairs", minimum=0)
    task = _checked(
        SyntheticTaskConfig,
        vocab_size=_cfg_int(cfg, "task", "vocab_size", minimum=8),
        min_len=_cfg_int(cfg, "task", "min_len", minimum=2),
        max_len=_cfg_int(cfg, "task", "max_len", minimum=2),
        num_pairs=num_train + num_eval,
        seed=_cfg_int(cfg, "task", "seed"),
    )
    pairs, alignments, vocab = generate_synthetic_task(task)
    splits = {"train": (pairs[:num_train], alignments[:num_train])}
    if num_eval:
        splits["eval"] = (pairs[num_train:], alignments[num_train:])
    outputs = []
    for split, (split_pairs, split_aligns) in splits.items():
        src = dirs["data"] / f"{split}.src"
        tgt = dirs["data"] / f"{split}.tgt"
        align = dirs["data"] / f"{split}.align"
        save_parallel_corpus(split_pairs, vocab, src, tgt)
        save_alignments(split_aligns, align)
        outputs += [src, tgt, align]
    vocab_path = dirs["data"] / "vocab.txt"
    save_vocabulary(vocab, vocab_path)
    outputs.append(vocab_path)
    inputs = [args.config] if args.config else []
    _write_manifest(dirs, "gen-data", sys.argv[1:], cfg, inputs, outputs, started)
    print(f"wrote {len(pairs)} pairs ({num_train} train, {num_eval} eval) to {dirs['data']}")
    return 0


def _model_config(cfg) -> TinyModelConfig:
    return _checked(
        TinyModelConfig,
        embed_dim=_cfg_int(cfg, "model", "embed_dim", minimum=1),
        hidden_dim=_cfg_int(cfg, "model", "hidden_dim", minimum=1),
        num_layers=_cfg_int(cfg, "model", "num_layers", minimum=1),
        num_heads=_cfg_int(cfg, "model", "num_heads", minimum=1),
        learning_rate=_cfg_float(cfg, "model", "learning_rate"),
        epochs=_cfg_int(cfg, "model", "epochs", minimum=1),
        batch_size=_cfg_int(cfg, "model", "batch_size", minimum=1),
        k_candidates=tuple(_cfg_int_list(cfg, "model", "k_candidates")),
        seed=_cfg_int(cfg, "model", "seed"),
        causal_source=_cfg_bool(cfg, "model", "causal_source"),
    )


def cmd_train_mt(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    train_pairs, train_files = _load_split(dirs, vocab, "train")
    model_cfg = _model_config(cfg)
    if args.objective == "multipath":
        model = train_multipath_waitk(model_cfg, train_pairs, vocab)
    else:
        model = train_full_sentence(model_cfg, train_pairs, vocab)
    ckpt = dirs["models"] / f"mt_{args.objective}.pt"
    save_model(model, ckpt)
    loss_log = dirs["models"] / f"loss_{args.objective}.tsv"
    _write_loss_log(loss_log, model.train_log)
    report = [f"final train loss {model.train_log[-1]:.4f}"]
    eval_src = dirs["data"] / "eval.src"
    if eval_src.is_file():
        eval_pairs, _ = _load_split(dirs, vocab, "eval")
        if eval_pairs:
            nll = corpus_nll(model, eval_pairs)
            report.append(f"eval NLL {nll:.4f}")
    inputs = ([args.config] if args.config else []) + [vocab_path] + train_files
    _write_manifest(dirs, "train-mt", sys.argv[1:], cfg, inputs, [ckpt, loss_log], started)
    print(f"saved {ckpt} ({', '.join(report)})")
    return 0


def _load_distribution_model(dirs, cfg, vocab, source, inputs):
    if source == "oracle":
        return SyntheticOracleModel(vocab)
    ckpt = _require(dirs["models"] / f"mt_{source}.pt", f"run train-mt --objective {source} first")
    inputs.append(ckpt)
    return load_model(ckpt, vocab)


def cmd_gen_divergence(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    split = _cfg_choice(cfg, "divergence", "split", ("train", "eval"))
    measure = _cfg_choice(cfg, "divergence", "measure", MEASURES)
    source = _cfg_choice(cfg, "divergence", "source", ("oracle", "full", "multipath"))
    pairs, corpus_files = _load_split(dirs, vocab, split)
    limit = _cfg_int(cfg, "divergence", "limit", minimum=0)
    if limit:
        pairs = pairs[:limit]
    if not pairs:
        raise ConfigError(f"no pairs in the {split} split")
    inputs = ([args.config] if args.config else []) + [vocab_path] + corpus_files
    model = _load_distribution_model(dirs, cfg, vocab, source, inputs)

    matrices = _parallel_map(
        lambda pair: divergence_matrix(model, pair, measure), pairs, args.workers
    )
    matrices_path = _matrices_path(dirs, cfg, split)
    save_matrices(matrices, matrices_path)
    records = [rec for matrix in matrices for rec in matrix_records(matrix)]
    supervision_path = _supervision_path(dirs, cfg, split)
    save_supervision(records, supervision_path)
    _write_manifest(
        dirs, "gen-divergence", sys.argv[1:], cfg, inputs,
        [matrices_path, supervision_path], started, workers=args.workers,
    )
    print(f"wrote {len(matrices)} matrices ({len(records)} cells) to {matrices_path}")
    return 0


def cmd_train_policy(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    base_kind = _cfg_choice(cfg, "policy", "base", ("full", "multipath"))
    base_ckpt = _require(dirs["models"] / f"mt_{base_kind}.pt", "run train-mt first")
    base = load_model(base_ckpt, vocab)
    split = _cfg_choice(cfg, "divergence", "split", ("train", "eval"))
    supervision_path = _require(_supervision_path(dirs, cfg, split), "run gen-divergence first")
    records = load_supervision(supervision_path)
    pairs, corpus_files = _load_split(dirs, vocab, split)
    policy_cfg = _checked(
        DapPolicyConfig,
        extra_decoder_layers=_cfg_int(cfg, "policy", "extra_decoder_layers", minimum=0),
        head_hidden_dim=_cfg_int(cfg, "policy", "head_hidden_dim", minimum=1),
        loss_kind=_cfg_choice(cfg, "policy", "loss_kind", ("mse", "bce")),
        learning_rate=_cfg_float(cfg, "policy", "learning_rate"),
        epochs=_cfg_int(cfg, "policy", "epochs", minimum=1),
        batch_size=_cfg_int(cfg, "policy", "batch_size", minimum=1),
        seed=_cfg_int(cfg, "policy", "seed"),
    )
    measure = _cfg_choice(cfg, "divergence", "measure", MEASURES)
    policy = train_policy(policy_cfg, base, records, pairs, measure)
    policy_path = dirs["models"] / "policy.pt"
    save_policy(policy, policy_path)
    loss_log = dirs["models"] / "policy_loss.tsv"
    _write_loss_log(loss_log, policy.train_log)
    inputs = ([args.config] if args.config else []) + [vocab_path, base_ckpt, supervision_path] + corpus_files
    _write_manifest(dirs, "train-policy", sys.argv[1:], cfg, inputs, [policy_path, loss_log], started)
    print(f"saved {policy_path} (final loss {policy.train_log[-1]:.6f})")
    return 0


def _operating_points(cfg, policy_kind) -> list[tuple[str, float | None, int | None]]:
    """(label, threshold, k) per sweep point."""
    if policy_kind == "waitk":
        ks = _cfg_int_list(cfg, "sweep", "ks")
        if not ks:
            raise ConfigError("[sweep] ks must be non-empty")
        if any(k < 1 for k in ks):
            raise ConfigError("[sweep] ks must be >= 1")
        return [(f"k={k}", None, k) for k in ks]
    return [(f"lambda={lam:g}", lam, None) for lam in _lambdas(cfg)]


def _streaming_stack(dirs, cfg, vocab, policy_kind, split, inputs):
    """Translation model plus a per-pair policy factory for live simulation."""
    base_kind = _cfg_choice(cfg, "policy", "base", ("full", "multipath"))
    ckpt = _require(dirs["models"] / f"mt_{base_kind}.pt", "run train-mt first")
    inputs.append(ckpt)
    model = load_model(ckpt, vocab)
    if policy_kind == "learned":
        policy_path = _require(dirs["models"] / "policy.pt", "run train-policy first")
        inputs.append(policy_path)
        learned = load_policy(policy_path, model)
        return model, lambda pair: learned
    if policy_kind == "oracle":
        matrices_path = _require(
            _matrices_path(dirs, cfg, split), "run gen-divergence on this split first"
        )
        inputs.append(matrices_path)
        by_id = {m.pair_id: m for m in load_matrices(matrices_path)}

        def factory(pair):
            matrix = by_id.get(pair.id)
            if matrix is None:
                raise ValueError(f"no divergence matrix for pair {pair.id}")
            return MatrixPolicy(matrix)

        return model, factory
    raise ConfigError(f"unknown policy kind {policy_kind!r}")


def _run_simulation(model, factory, pairs, limits, workers):
    def run(pair):
        return simulate(model, factory(pair), pair.source, limits, pair_id=pair.id)

    return _parallel_map(run, pairs, workers)


def _simulation_rows(results, pairs_by_id, vocab, threshold, r_max):
    rows = []
    als = []
    for result in results:
        pair = pairs_by_id[result.pair_id]
        al = average_lagging(result.path, pair.n_source, len(result.hypothesis))
        als.append(al)
        text = " ".join(vocab.token(y) for y in result.hypothesis)
        rows.append(
            SimulationLogRow(
                pair_id=result.pair_id,
                threshold=threshold,
                r_max=r_max,
                al=al,
                path=result.path,
                hypothesis_text=text,
            )
        )
    return rows, als


def _strip_eos(tokens: list) -> list:
    return [t for t in tokens if t != EOS_ID]


def cmd_simulate(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    split = _cfg_choice(cfg, "sweep", "split", ("train", "eval"))
    pairs, corpus_files = _load_split(dirs, vocab, split)
    if not pairs:
        raise ConfigError(f"no pairs in the {split} split")
    policy_kind = args.policy_kind or _cfg_choice(cfg, "sweep", "policy", ("waitk", "learned", "oracle"))
    inputs = ([args.config] if args.config else []) + [vocab_path] + corpus_files
    if policy_kind == "waitk":
        ks = _cfg_int_list(cfg, "sweep", "ks")
        k = ks[0] if ks else 1
        base_kind = _cfg_choice(cfg, "policy", "base", ("full", "multipath"))
        ckpt = _require(dirs["models"] / f"mt_{base_kind}.pt", "run train-mt first")
        inputs.append(ckpt)
        model = load_model(ckpt, vocab)
        factory = _waitk_factory(k)
        threshold, r_max, op = 0.5, None, f"k={k}"
    else:
        model, factory = _streaming_stack(dirs, cfg, vocab, policy_kind, split, inputs)
        threshold = _lambdas(cfg)[0]
        r_max = _r_max(cfg)
        op = f"lambda={threshold:g}"
    limits = SimulationLimits(threshold=threshold, r_max=r_max)
    results = _run_simulation(model, factory, pairs, limits, args.workers)
    pairs_by_id = {p.id: p for p in pairs}
    rows, als = _simulation_rows(results, pairs_by_id, vocab, threshold, r_max)
    log_path = dirs["runs"] / f"sim_{policy_kind}_{op.replace('=', '')}.tsv"
    save_simulation_log(rows, log_path)
    truncated = sum(r.truncated for r in results)
    _write_manifest(
        dirs, "simulate", sys.argv[1:], cfg, inputs, [log_path], started, workers=args.workers
    )
    mean_al = sum(als) / len(als)
    print(f"{policy_kind} {op}: {len(results)} sentences, mean AL {mean_al:.3f}, truncated {truncated}")
    return 0


def _waitk_factory(k: int):
    policy = WaitkPolicy(k)
    return lambda pair: policy


def cmd_sweep(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    split = _cfg_choice(cfg, "sweep", "split", ("train", "eval"))
    quality = _cfg_choice(cfg, "sweep", "quality", ("bleu", "nll"))
    policy_kind = args.policy_kind or _cfg_choice(cfg, "sweep", "policy", ("waitk", "learned", "oracle"))
    pairs, corpus_files = _load_split(dirs, vocab, split)
    if not pairs:
        raise ConfigError(f"no pairs in the {split} split")
    pairs_by_id = {p.id: p for p in pairs}
    points = _operating_points(cfg, policy_kind)
    inputs = ([args.config] if args.config else []) + [vocab_path] + corpus_files
    outputs = []
    runs = []

    if quality == "bleu":
        if policy_kind == "waitk":
            base_kind = _cfg_choice(cfg, "policy", "base", ("full", "multipath"))
            ckpt = _require(dirs["models"] / f"mt_{base_kind}.pt", "run train-mt first")
            inputs.append(ckpt)
            model = load_model(ckpt, vocab)
        else:
            model, factory = _streaming_stack(dirs, cfg, vocab, policy_kind, split, inputs)
        refs = [_strip_eos(list(p.target)) for p in pairs]
        for label, lam, k in points:
            if policy_kind == "waitk":
                factory = _waitk_factory(k)
                limits = SimulationLimits(threshold=0.5, r_max=None)
            else:
                limits = SimulationLimits(threshold=lam, r_max=_r_max(cfg))
            results = _run_simulation(model, factory, pairs, limits, args.workers)
            rows, als = _simulation_rows(results, pairs_by_id, vocab, limits.threshold, limits.r_max)
            log_path = dirs["runs"] / f"sim_{policy_kind}_{label.replace('=', '')}.tsv"
            save_simulation_log(rows, log_path)
            outputs.append(log_path)
            hyps = [_strip_eos(list(r.hypothesis)) for r in results]
            bleu = corpus_bleu(hyps, refs)
            runs.append(EvaluationRun(label=label, operating_point=label, al_values=als, bleu=bleu))
            print(f"{label}: mean AL {runs[-1].mean_al:.3f}, BLEU {bleu:.2f}")
    else:
        runs = _replay_sweep(dirs, cfg, vocab, policy_kind, split, pairs, points, inputs, args.workers)
        for run in runs:
            print(f"{run.label}: mean AL {run.mean_al:.3f}, NLL {run.mean_nll:.4f}")

    curve = build_curve(runs, quality=quality)
    curve_path = dirs["runs"] / f"curve_{policy_kind}_{quality}.tsv"
    save_curve(curve, curve_path)
    outputs.append(curve_path)
    if policy_kind != "waitk":
        table_path = dirs["runs"] / f"threshold_al_{policy_kind}.tsv"
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write("lambda\tAL\n")
            for (label, lam, _), run in zip(points, runs):
                fh.write(f"{lam:.9g}\t{run.mean_al:.9g}\n")
        outputs.append(table_path)
    _write_manifest(dirs, "sweep", sys.argv[1:], cfg, inputs, outputs, started, workers=args.workers)
    print(f"wrote {curve_path}")
    return 0


def _replay_sweep(dirs, cfg, vocab, policy_kind, split, pairs, points, inputs, workers):
    """Reference-scoring sweep: fixed or thresholded schedules, no generation."""
    base_kind = _cfg_choice(cfg, "policy", "base", ("full", "multipath"))
    ckpt = _require(dirs["models"] / f"mt_{base_kind}.pt", "run train-mt first")
    inputs.append(ckpt)
    model = load_model(ckpt, vocab)
    matrices_by_id = {}
    policy = None
    if policy_kind == "oracle":
        matrices_path = _require(
            _matrices_path(dirs, cfg, split), "run gen-divergence on this split first"
        )
        inputs.append(matrices_path)
        matrices_by_id = {m.pair_id: m for m in load_matrices(matrices_path)}
    elif policy_kind == "learned":
        policy_path = _require(dirs["models"] / "policy.pt", "run train-policy first")
        inputs.append(policy_path)
        policy = load_policy(policy_path, model)

    def schedule_for(pair, lam, k):
        if policy_kind == "waitk":
            return [waitk_g(t, k, pair.n_source) for t in range(1, pair.n_target + 1)]
        if policy_kind == "oracle":
            matrix = matrices_by_id.get(pair.id)
            if matrix is None:
                raise ValueError(f"no divergence matrix for pair {pair.id}")
            return threshold_path(matrix, lam, r_max=_r_max(cfg))
        return threshold_path(policy.predicted_matrix(pair), lam, r_max=_r_max(cfg))

    runs = []
    for label, lam, k in points:
        def evaluate(pair):
            path = schedule_for(pair, lam, k)
            nll = replay_path_nll(model, pair, path)
            al = average_lagging(path, pair.n_source, pair.n_target)
            return nll, al, pair.n_target

        rows = _parallel_map(evaluate, pairs, workers)
        total_nll = sum(nll * n for nll, _, n in rows)
        total_tokens = sum(n for _, _, n in rows)
        als = [al for _, al, _ in rows]
        runs.append(
            EvaluationRun(
                label=label,
                operating_point=label,
                al_values=als,
                mean_nll=total_nll / total_tokens,
            )
        )
    return runs


def cmd_evaluate(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    vocab, vocab_path = _load_vocab(dirs)
    split = _cfg_choice(cfg, "sweep", "split", ("train", "eval"))
    pairs, corpus_files = _load_split(dirs, vocab, split)
    pairs_by_id = {p.id: p for p in pairs}
    log_path = _require(Path(args.log), "pass --log from a simulate run")
    rows = load_simulation_log(log_path)
    if not rows:
        raise ValueError(f"{log_path} is empty")
    eos_token = vocab.token(EOS_ID)
    hyps = []
    refs = []
    als = []
    for row in rows:
        pair = pairs_by_id.get(row.pair_id)
        if pair is None:
            raise ValueError(f"log references pair {row.pair_id} outside the {split} split")
        tokens = [t for t in row.hypothesis_text.split(" ") if t] if row.hypothesis_text else []
        hyps.append([t for t in tokens if t != eos_token])
        refs.append([vocab.token(y) for y in _strip_eos(list(pair.target))])
        als.append(row.al)
    result = {
        "log": str(log_path),
        "split": split,
        "count": len(rows),
        "bleu": corpus_bleu(hyps, refs),
        "mean_al": sum(als) / len(als),
    }
    out_path = dirs["runs"] / "evaluation.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    inputs = ([args.config] if args.config else []) + [vocab_path, log_path] + corpus_files
    _write_manifest(dirs, "evaluate", sys.argv[1:], cfg, inputs, [out_path], started)
    print(f"BLEU {result['bleu']:.2f}, mean AL {result['mean_al']:.3f} over {result['count']} sentences")
    return 0


def cmd_curve(args, cfg) -> int:
    started = _now()
    dirs = _dirs(cfg)
    points = []
    inputs = [args.config] if args.config else []
    for item in args.inputs:
        path = _require(Path(item), "curve file from a sweep run")
        inputs.append(path)
        points.extend(load_curve(path))
    if not points:
        raise ValueError("no curve points found")
    points.sort(key=lambda p: p.latency)
    out_path = Path(args.output) if args.output else dirs["runs"] / "curve_merged.tsv"
    save_curve(points, out_path)
    _write_manifest(dirs, "curve", sys.argv[1:], cfg, inputs, [out_path], started)
    print(f"wrote {len(points)} points to {out_path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="simtpol", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--out-dir", help="output directory (overrides [paths] out_dir)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--measure", choices=MEASURES, help="override [divergence] measure")
    common.add_argument("--lambda", dest="lam", help="comma-separated thresholds (overrides [sweep] lambdas)")
    common.add_argument("--k", help="comma-separated wait-k values (overrides [sweep] ks)")
    common.add_argument("--r-max", dest="r_max", type=int, help="consecutive-read cap, 0 for none")
    common.add_argument("--workers", type=int, default=1, help="sentence-level parallelism")

    sub = parser.add_subparsers(dest="command")
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    p_train = sub.add_parser("train-mt", parents=[common], help="train the translation model")
    p_train.add_argument("--objective", choices=("full", "multipath"), required=True)
    sub.add_parser("gen-divergence", parents=[common], help="export divergence matrices and supervision")
    sub.add_parser("train-policy", parents=[common], help="train the divergence predictor")
    p_sim = sub.add_parser("simulate", parents=[common], help="stream one operating point")
    p_sim.add_argument("--policy-kind", choices=("waitk", "learned", "oracle"))
    p_sweep = sub.add_parser("sweep", parents=[common], help="run a latency sweep and emit a curve")
    p_sweep.add_argument("--policy-kind", choices=("waitk", "learned", "oracle"))
    p_eval = sub.add_parser("evaluate", parents=[common], help="score a simulation log")
    p_eval.add_argument("--log", required=True, help="simulation log to score")
    p_curve = sub.add_parser("curve", parents=[common], help="merge curve files")
    p_curve.add_argument("inputs", nargs="+", help="curve files to merge")
    p_curve.add_argument("--output", help="merged curve destination")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-mt": cmd_train_mt,
    "gen-divergence": cmd_gen_divergence,
    "train-policy": cmd_train_policy,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "curve": cmd_curve,
}


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required (see --help)")
        if args.workers is not None and args.workers < 1:
            raise _UsageError("--workers must be >= 1")
        cfg = load_config(args.config)
        apply_overrides(cfg, args)
        return _COMMANDS[args.command](args, cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
