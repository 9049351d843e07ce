"""Command-line front end: ``pairconnect <command> [--config FILE] [--key value ...]``.

Any training-config key (see ``TrainConfig``) can be given as a flag, e.g.
``--lr 1e-3 --K 1024 --layers 1``; flags override the config file.
"""

from __future__ import annotations

import argparse
import csv
import functools
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .bench import BenchConfig, bench_many, bench_model_config, bench_sweep, write_bench_csv
from .checkpoint import CheckpointError
from .gradcheck import run_small_gradcheck
from .hashing import estimate_collision_rate
from .layers import POOLING_MODES, ModelConfig
from .mlmdata import (DataConfig, DataError, Vocab, build_vocab, chunk_sequences, cycle_task,
                      fixed_eval_batches, read_tokens)
from .models import init_model
from .training import ALIASES, TrainConfig, Trainer, evaluate, load_checkpoint, read_flat_config

GRADCHECK_TOL = 1e-6


def _config_keys() -> list[str]:
    keys = [f.name for f in fields(ModelConfig)] + [f.name for f in fields(DataConfig)]
    keys += [f.name for f in fields(TrainConfig) if f.name not in ("model", "data")]
    return sorted(set(keys) | set(ALIASES))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    g = p.add_argument_group("config overrides")
    for k in _config_keys():
        flag = "--" + k.replace("_", "-")
        names = [flag] if flag == f"--{k}" else [flag, f"--{k}"]
        g.add_argument(*names, dest=f"cfg_{k}", metavar="V", default=None)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", help="training corpus file(s), comma separated")
    p.add_argument("--eval", dest="eval_path", help="evaluation corpus file")
    p.add_argument("--task", choices=("cycle",), help="synthetic task instead of a corpus")
    p.add_argument("--task-size", type=int, default=2000, help="synthetic training sequences")
    p.add_argument("--task-words", type=int, default=20, help="real words in the synthetic task")
    p.add_argument("--vocab", help="vocabulary TSV to read (or to write when training)")


def _parse_list(text: str, kind=int) -> list:
    try:
        return [kind(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise nx.ConfigError(f"bad list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairconnect", description=__doc__.splitlines()[0],
                                 allow_abbrev=False)
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.add_parser = functools.partial(sub.add_parser, allow_abbrev=False)

    p = sub.add_parser("train", help="train a model with the MLM objective")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--metrics", help="metrics CSV (appended to when resuming)")
    p.add_argument("--checkpoint", help="checkpoint written at the end")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("bench", help="single-thread inference throughput")
    _add_config_flags(p)
    _add_bench_flags(p)
    p.add_argument("--models", default="pairconnect,transformer")
    p.add_argument("--out", help="bench CSV")

    p = sub.add_parser("sweep", help="throughput grid over m and K")
    _add_config_flags(p)
    _add_bench_flags(p)
    p.add_argument("--models", default="pairconnect,transformer")
    p.add_argument("--m-values", default="32,64,128")
    p.add_argument("--k-values", default="100,1000,10000")
    p.add_argument("--out", help="bench CSV")

    p = sub.add_parser("gradcheck", help="backward pass vs central differences on a small model")
    p.add_argument("--model", choices=("pairconnect", "transformer"), default="pairconnect")
    p.add_argument("--precision", choices=("f64", "f32"), default="f64")
    p.add_argument("--pooling", choices=POOLING_MODES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)

    p = sub.add_parser("ablate-hash", help="train and evaluate over a grid of hash sizes")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--k", dest="k_list", default="100,500,1000,5000,10000")
    p.add_argument("--out", help="ablation CSV (stdout when omitted)")

    p = sub.add_parser("collide", help="empirical hash collision rates")
    p.add_argument("--k", dest="table_size", type=int, default=100)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _add_bench_flags(p):
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--bench-batch", type=int, default=1, help="samples per forward pass")


def _train_config(args, **forced) -> TrainConfig:
    values = read_flat_config(args.config) if args.config else {}
    for k in _config_keys():
        v = getattr(args, f"cfg_{k}", None)
        if v is not None:
            values[k] = v
    values.update(forced)
    return TrainConfig.from_flat(values)


def _load_data(args, cfg_values: TrainConfig | None = None):
    """Return ``(train_seqs, eval_seqs, vocab_size, vocab)`` for the chosen source."""
    m = cfg_values.data.seq_len if cfg_values else 128
    if args.task == "cycle":
        seed = cfg_values.seed if cfg_values else 0
        train = cycle_task(args.task_size, m, args.task_words, seed)
        ev = cycle_task(max(100, args.task_size // 4), m, args.task_words, seed + 1)
        return train, ev, args.task_words + 2, None
    if not args.train and not (args.vocab and args.eval_path):
        raise DataError("give --train FILE (and --eval FILE) or --task cycle")
    if args.train:
        tokens = read_tokens(args.train.split(","))
        vocab = Vocab.load_tsv(args.vocab) if args.vocab and Path(args.vocab).exists() else build_vocab(tokens)
        train = chunk_sequences(vocab.encode(tokens), m)
    else:
        vocab = Vocab.load_tsv(args.vocab)
        train = None
    ev = chunk_sequences(vocab.encode(read_tokens(args.eval_path)), m) if args.eval_path else None
    return _drop_empty(train), _drop_empty(ev), vocab.size, vocab


def _drop_empty(seqs):
    if seqs is None:
        return None
    return seqs[(seqs >= 2).any(axis=1)]


def cmd_train(args) -> int:
    if args.resume:
        cfg = TrainConfig.from_flat(load_checkpoint(args.resume).config)
        if args.cfg_steps is not None:
            cfg = cfg.replace(steps=args.cfg_steps)
    else:
        cfg = _train_config(args)
    train, ev, vsize, vocab = _load_data(args, cfg)
    if train is None:
        raise DataError("training needs --train or --task")
    if not args.resume:
        cfg = cfg.replace(vocab_size=vsize)
    if vocab is not None and args.vocab and not Path(args.vocab).exists():
        vocab.save_tsv(args.vocab)
    tr = Trainer.resume(args.resume, train, ev) if args.resume else Trainer(cfg, train, ev)
    remaining = cfg.steps - tr.step
    if remaining > 0:
        tr.run(remaining)
    if args.metrics:
        tr.log.write_csv(args.metrics, append=bool(args.resume))
    if args.checkpoint:
        tr.save(args.checkpoint)
    train_losses = tr.log.losses("train")
    if train_losses:
        print(f"step {tr.step} train_loss {train_losses[-1]:.6f}")
    if tr.eval_batches:
        res = tr.evaluate()
        print(f"eval_loss {res.loss:.6f} eval_acc {res.accuracy:.4f} masked {res.n_masked}")
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_flat(ck.config)
    _, ev, _, _ = _load_data(args, cfg)
    if ev is None:
        raise DataError("evaluation needs --eval FILE or --task")
    res = evaluate(ck.model, fixed_eval_batches(ev, cfg.data, cfg.eval_seed))
    print(f"eval_loss {res.loss:.6f} eval_acc {res.accuracy:.4f} masked {res.n_masked}")
    return 0


def _bench_config(args, m: int) -> BenchConfig:
    return BenchConfig(seq_len=m, batch_size=args.bench_batch, warmup=args.warmup,
                       iters=args.iters, reps=args.reps)


def _print_reports(reports):
    for r in reports:
        print(f"{r.label:40s} {r.samples_per_sec:10.3f} samples/s "
              f"(mean {r.mean:.3f}, std {r.std:.3f}, n={len(r.runs)})")
    if reports:
        print(f"host: {reports[0].host}; threads: {reports[0].threads}")
        for note in reports[0].notes:
            print(f"warning: {note}")


def cmd_bench(args) -> int:
    cfg = _train_config(args)
    kinds = _parse_list(args.models, str)
    models = {}
    for kind in kinds:
        models[kind] = init_model(bench_model_config(cfg.model, kind=kind))
    reports = list(bench_many(models, _bench_config(args, cfg.model.seq_len)).values())
    _print_reports(reports)
    by = {r.model: r for r in reports}
    if "pairconnect" in by and "transformer" in by:
        ratio = by["pairconnect"].samples_per_sec / by["transformer"].samples_per_sec
        print(f"pairconnect/transformer throughput ratio {ratio:.3f}")
    if args.out:
        write_bench_csv(reports, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    reports = bench_sweep(cfg.model, _parse_list(args.models, str), _parse_list(args.m_values),
                          _parse_list(args.k_values), _bench_config(args, cfg.model.seq_len))
    _print_reports(reports)
    if args.out:
        write_bench_csv(reports, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    dtype = "float64" if args.precision == "f64" else "float32"
    modes = POOLING_MODES if args.pooling == "all" and args.model == "pairconnect" else (
        ("pool-then-mlp",) if args.pooling == "all" else (args.pooling,))
    worst = 0.0
    for mode in modes:
        err = run_small_gradcheck(args.model, mode, args.seed, dtype, args.h)
        label = mode if args.model == "pairconnect" else "attention"
        print(f"{args.model} {label}: max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def run_ablation(cfg: TrainConfig, datasets: dict[str, tuple[np.ndarray, np.ndarray]],
                 k_values: list[int]) -> list[list]:
    """Rows ``[K, dataset, test_loss, dataset, test_loss, ...]``."""
    rows = []
    for K in k_values:
        row: list = [K]
        for name, (train, ev) in datasets.items():
            run = cfg.replace(table_size=K, kind="pairconnect")
            tr = Trainer(run, train, ev)
            tr.run(run.steps)
            row += [name, round(tr.evaluate().loss, 6)]
        rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    train, ev, vsize, _ = _load_data(args, cfg)
    if train is None or ev is None:
        raise DataError("ablate-hash needs training and evaluation data")
    cfg = cfg.replace(vocab_size=vsize)
    name = args.task or Path(args.train.split(",")[0]).stem
    rows = run_ablation(cfg, {name: (train, ev)}, _parse_list(args.k_list))
    header = ["hash_size"] + ["dataset", "test_loss"] * ((len(rows[0]) - 1) // 2)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_collide(args) -> int:
    st = estimate_collision_rate(args.table_size, args.heads, args.samples, nx.make_rng(args.seed, 8))
    print(f"K={st.table_size} heads={st.heads} pairs={st.samples}")
    for h, (rate, se) in enumerate(zip(st.per_head_rate, st.per_head_stderr)):
        print(f"head {h} collision rate {rate:.6f} +- {se:.6f} (bound 1/K = {st.per_head_bound:.6f})")
    print(f"all-heads collision rate {st.all_heads_rate:.6f} +- {st.all_heads_stderr:.6f} "
          f"(bound 1/K^l = {st.all_heads_bound:.3e})")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "ablate-hash": cmd_ablate, "collide": cmd_collide}


def main(argv=None) -> int:
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # argparse already printed usage
        return int(e.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError, IndexError, KeyError, CheckpointError) as e:
        print(f"pairconnect {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
