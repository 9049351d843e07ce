"""Single-thread CPU inference throughput and work counters.

Timing uses a monotonic clock, excludes warmup, and reports the median over
repetitions. Models given to :func:`bench_many` are measured round-robin,
one repetition of each in turn, so slow drift in machine load hits them
alike. The thread count is pinned through threadpoolctl; set
``PAIRCONNECT_BENCH_THREADS`` to override the default of one thread.
"""

from __future__ import annotations

import csv
import os
import platform
import statistics
import time
import warnings
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .layers import ModelConfig
from .mlmdata import FIRST_WORD
from .models import Model, forward, init_model
from .numerics import ConfigError

THREADS_ENV = "PAIRCONNECT_BENCH_THREADS"
BENCH_HEADER = ("model", "mode", "L", "heads", "d", "K", "m", "samples_per_sec", "flops_est", "lookups")


@dataclass
class BenchConfig:
    seq_len: int = 128
    batch_size: int = 1
    warmup: int = 5
    iters: int = 30
    reps: int = 5
    pin_threads: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iters < 30:
            raise ConfigError("at least 30 measured iterations are required")
        if self.warmup < 5:
            raise ConfigError("at least 5 warmup iterations are required")
        if self.reps < 5:
            raise ConfigError("at least 5 repetitions are required")
        if self.seq_len < 2 or self.batch_size < 1:
            raise ConfigError("seq_len must be >= 2 and batch_size >= 1")


@dataclass
class BenchReport:
    label: str
    model: str
    mode: str
    model_config: dict
    bench_config: dict
    runs: list[float]  # samples/sec per repetition
    flops_est: int
    lookups: int
    host: str
    threads: int | None
    notes: list[str] = field(default_factory=list)

    @property
    def samples_per_sec(self) -> float:
        return statistics.median(self.runs)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.runs)

    @property
    def std(self) -> float:
        return statistics.stdev(self.runs) if len(self.runs) > 1 else 0.0

    def csv_row(self) -> tuple:
        c = self.model_config
        K = c["table_size"] if c["kind"] == "pairconnect" else 0
        return (self.model, self.mode, c["layers"], c["heads"], c["d"], K,
                self.bench_config["seq_len"], f"{self.samples_per_sec:.4f}", self.flops_est, self.lookups)


def host_description() -> str:
    return (f"{platform.system()} {platform.machine()} {platform.processor() or '?'}; "
            f"{os.cpu_count()} cpus; python {platform.python_version()}; numpy {np.__version__}")


def _thread_target() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive")
    return n


def _pin(stack: ExitStack, notes: list[str]) -> int | None:
    n = _thread_target()
    try:
        from threadpoolctl import threadpool_limits
        stack.enter_context(threadpool_limits(limits=n))
    except Exception as e:  # pinning is best effort
        notes.append(f"thread pinning failed: {e}")
        warnings.warn(notes[-1])
        return None
    return n


def synthetic_tokens(cfg: ModelConfig, bench: BenchConfig) -> np.ndarray:
    """Uniform random real-word ids, shape ``[batch, m]``."""
    rng = nx.make_rng(bench.seed, 7)
    return rng.integers(FIRST_WORD, cfg.vocab_size, size=(bench.batch_size, bench.seq_len))


def work_counts(model: Model, tokens: np.ndarray) -> nx.OpCounter:
    with nx.count_ops() as ops:
        forward(model, tokens)
    return ops


def mode_of(model: Model) -> str:
    c = model.config
    return c.pooling if c.kind == "pairconnect" else "attention"


def bench_many(models: dict[str, Model], cfg: BenchConfig) -> dict[str, BenchReport]:
    """Throughput of every model, repetitions interleaved across models."""
    if not models:
        raise ConfigError("nothing to benchmark")
    notes: list[str] = []
    tokens = {k: synthetic_tokens(m.config, cfg) for k, m in models.items()}
    runs: dict[str, list[float]] = {k: [] for k in models}
    with ExitStack() as stack:
        threads = _pin(stack, notes) if cfg.pin_threads else None
        for k, m in models.items():
            for _ in range(cfg.warmup):
                forward(m, tokens[k])
        for _ in range(cfg.reps):
            for k, m in models.items():
                for _ in range(cfg.warmup):
                    forward(m, tokens[k])
                t0 = time.perf_counter()
                for _ in range(cfg.iters):
                    forward(m, tokens[k])
                elapsed = time.perf_counter() - t0
                runs[k].append(cfg.iters * cfg.batch_size / elapsed)
    host = host_description()
    out = {}
    for k, m in models.items():
        ops = work_counts(m, tokens[k])
        out[k] = BenchReport(k, m.config.kind, mode_of(m), m.config.to_dict(), asdict(cfg), runs[k],
                             ops.total_flops, ops.lookups["pair"], host, threads, list(notes))
    return out


def bench_throughput(model: Model, cfg: BenchConfig) -> BenchReport:
    return bench_many({"model": model}, cfg)["model"]


def bench_model_config(base: ModelConfig, **changes) -> ModelConfig:
    """Inference copy of ``base``: dropout off, float32, plus ``changes``."""
    d = base.to_dict()
    d.update(dropout=0.0, dtype="float32")
    d.update(changes)
    return ModelConfig.from_dict(d)


def bench_sweep(base: ModelConfig, kinds, m_values, k_values, cfg: BenchConfig) -> list[BenchReport]:
    """Throughput grid over model kind, sequence length and (PairConnect) hash size."""
    points = [(kind, m, K) for kind in kinds for m in m_values
              for K in (k_values if kind == "pairconnect" else [base.table_size])]
    if len(points) < 2:
        raise ConfigError("a sweep needs at least two points")
    models = {}
    for kind, m, K in points:
        mc = bench_model_config(base, kind=kind, seq_len=m, table_size=K)
        models[f"{kind}/m={m}/K={K}"] = init_model(mc)
    reports = []
    for m in m_values:
        group = {k: v for k, v in models.items() if v.config.seq_len == m}
        reports += bench_many(group, _with_len(cfg, m)).values()
    return reports


def _with_len(cfg: BenchConfig, m: int) -> BenchConfig:
    d = asdict(cfg)
    d["seq_len"] = m
    return BenchConfig(**d)


def write_bench_csv(reports: list[BenchReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
