"""Pieces shared by both sequence models: config, 2-layer MLP, encodings, params."""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .numerics import ConfigError, Var

POOLING_MODES = ("per-pair-mlp", "pool-then-mlp", "concat-project")
MODEL_KINDS = ("pairconnect", "transformer")
RETRIEVALS = ("copy", "fused")
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class ModelConfig:
    """Architecture hyperparameters for either model kind.

    ``vocab_size`` counts every id including PAD (0) and MASK (1).
    ``pair_dim`` is the width of a pair-table row and of each pair head's
    output; ``None`` means ``d // heads`` so the concatenated heads are ``d``
    wide, like attention heads.

    ``retrieval`` picks how pool-then-mlp reads the pair rows: ``copy`` gathers
    every row into a fresh ``[m, m, dp]`` buffer and sums it, ``fused`` sums
    straight out of the table. Both give the same values and lookup counts.
    """

    kind: str = "pairconnect"
    vocab_size: int = 10002
    layers: int = 6
    heads: int = 4
    d: int = 256
    d_hidden: int = 256
    table_size: int = 1000
    pooling: str = "pool-then-mlp"
    pair_dim: int | None = None
    seq_len: int = 128
    dropout: float = 0.1
    positional: bool = True
    seed: int = 0
    hash_seed: int | None = None
    dtype: str = "float64"
    retrieval: str = "copy"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"unknown pooling mode {self.pooling!r}; choose from {POOLING_MODES}")
        if self.retrieval not in RETRIEVALS:
            raise ConfigError(f"retrieval must be one of {RETRIEVALS}, got {self.retrieval!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        for name in ("vocab_size", "heads", "d", "d_hidden", "table_size", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.layers < 0:
            raise ConfigError("layers must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if self.kind == "transformer" and self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.kind == "pairconnect" and self.pooling == "concat-project" and self.seq_len < 2:
            raise ConfigError("concat-project pooling needs seq_len >= 2")

    @property
    def head_dim(self) -> int:
        if self.kind == "transformer":
            return self.d // self.heads
        return self.pair_dim or max(1, self.d // self.heads)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    @property
    def global_hash_seed(self) -> int:
        return self.seed if self.hash_seed is None else self.hash_seed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Mlp2:
    """``dropout(dropout(gelu(x @ w0)) @ w1)``; no biases."""

    w0: Var
    w1: Var
    rate: float = 0.0

    def __call__(self, x: Var, rng=None, training: bool = False) -> Var:
        h = nx.dropout(nx.gelu(nx.matmul(x, self.w0)), self.rate, rng, training)
        return nx.dropout(nx.matmul(h, self.w1), self.rate, rng, training)


@functools.lru_cache(maxsize=32)
def positional_encoding(m: int, d: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding: sin on even columns, cos on odd columns (read-only)."""
    pos = np.arange(m, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
    pe.flags.writeable = False
    return pe


@dataclass
class ParamStore:
    """Ordered name -> array mapping plus the init RNG that filled it."""

    dtype: type
    rng: np.random.Generator
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def uniform(self, name, shape, fan_in=None):
        self.arrays[name] = nx.init_uniform(shape, fan_in or shape[0], self.rng, self.dtype)

    def zeros(self, name, shape):
        self.arrays[name] = np.zeros(shape, dtype=self.dtype)

    def ones(self, name, shape):
        self.arrays[name] = np.ones(shape, dtype=self.dtype)

    def mlp2(self, prefix, d_in, d1, d2):
        self.uniform(f"{prefix}.w0", (d_in, d1))
        self.uniform(f"{prefix}.w1", (d1, d2))


def bind(params: dict[str, np.ndarray], tape: nx.Tape | None) -> dict[str, Var]:
    """Wrap parameters as tape leaves (or untracked values when ``tape`` is None)."""
    if tape is None:
        return {k: Var(v) for k, v in params.items()}
    return {k: tape.leaf(v, k) for k, v in params.items()}


def grads_by_name(bound: dict[str, Var], grads: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: grads.get(v.id, np.zeros_like(v.value)) for k, v in bound.items()}


def mlp_of(P: dict[str, Var], prefix: str, rate: float) -> Mlp2:
    return Mlp2(P[f"{prefix}.w0"], P[f"{prefix}.w1"], rate)


def embed(P: dict[str, Var], tokens: np.ndarray, cfg: ModelConfig) -> Var:
    tokens = np.asarray(tokens, dtype=np.int64)
    x = nx.gather_rows(P["embed"], tokens)
    if cfg.positional:
        x = nx.add(x, nx.const(positional_encoding(tokens.shape[-1], cfg.d, cfg.np_dtype)))
    return x


def count_params(params: dict[str, np.ndarray], table_prefix: str = "pair_table") -> dict:
    tables = sum(v.size for k, v in params.items() if table_prefix in k)
    total = sum(v.size for v in params.values())
    itemsize = next(iter(params.values())).itemsize if params else 8
    return {
        "dense_params": total - tables,
        "table_params": tables,
        "total_params": total,
        "table_bytes": tables * itemsize,
        "total_bytes": total * itemsize,
    }
