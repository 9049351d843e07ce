"""PairConnect: pairwise token interactions from hashed embedding tables.

Each layer looks up, for every ordered token pair ``(i, j)`` of the input,
a row of a per-head hashed table, pools those rows per token, concatenates the
heads, and combines the result with a per-token (unigram) MLP path::

    x'   = unigram_mlp(h)
    x'_p = pair_proj_mlp([g_1(i), ..., g_l(i)])
    out  = combiner_mlp(x' + x'_p)

Pair keys are always the original input ids, at every depth; layers differ
only by their hash seeds and tables.

Pooling modes for one head ``g``:

``per-pair-mlp``    ``sum_j mlp(W[i, j])``
``pool-then-mlp``   ``mlp(sum_j W[i, j])`` (default; one MLP per token)
``concat-project``  ``mlp([W[i, j] for j != i])``; needs a fixed ``m``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .hashing import PairHasher, derive_seed, sequence_slots
from .layers import ModelConfig, ParamStore, Var, bind, count_params, embed, mlp_of
from .numerics import ShapeError


@dataclass
class PairTable:
    """View of one head's table together with the hasher that indexes it."""

    table: np.ndarray
    hasher: PairHasher

    def __post_init__(self):
        if self.table.shape[0] != self.hasher.table_size:
            raise ShapeError(
                f"table has {self.table.shape[0]} rows but hasher expects {self.hasher.table_size}")


@dataclass
class PairConnectModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    hash_seeds: np.ndarray  # (layers, heads)

    def table(self, layer: int, head: int) -> PairTable:
        seed = int(self.hash_seeds[layer, head])
        return PairTable(self.params[table_name(layer, head)],
                         PairHasher(seed, self.config.table_size))

    def slots(self, tokens) -> np.ndarray:
        """Slots of every ordered pair, shape ``(layers, heads) + tokens.shape + (m,)``."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if cfg.layers == 0:
            return np.zeros((0, cfg.heads) + tokens.shape + tokens.shape[-1:], dtype=np.int64)
        flat = sequence_slots(tokens, self.hash_seeds.reshape(-1), cfg.table_size)
        return flat.reshape((cfg.layers, cfg.heads) + flat.shape[1:])

    def parameter_report(self) -> dict:
        return count_params(self.params)


def table_name(layer: int, head: int) -> str:
    return f"layer{layer}.head{head}.pair_table"


def init_pairconnect(cfg: ModelConfig) -> PairConnectModel:
    if cfg.kind != "pairconnect":
        raise ValueError(f"config is for {cfg.kind!r}, not pairconnect")
    ps = ParamStore(cfg.np_dtype, nx.make_rng(cfg.seed, 1))
    d, dp, dh, m = cfg.d, cfg.head_dim, cfg.d_hidden, cfg.seq_len
    ps.uniform("embed", (cfg.vocab_size, d), fan_in=d)
    for layer in range(cfg.layers):
        pre = f"layer{layer}"
        for head in range(cfg.heads):
            ps.uniform(table_name(layer, head), (cfg.table_size, dp), fan_in=dp)
            d_in = (m - 1) * dp if cfg.pooling == "concat-project" else dp
            ps.mlp2(f"{pre}.head{head}.mlp", d_in, dp, dp)
        ps.mlp2(f"{pre}.pair_proj", cfg.heads * dp, dh, d)
        ps.mlp2(f"{pre}.unigram", d, dh, d)
        ps.mlp2(f"{pre}.combiner", d, dh, d)
    ps.uniform("out_proj", (d, cfg.vocab_size), fan_in=d)
    seeds = np.array([[derive_seed(cfg.global_hash_seed, l, h) for h in range(cfg.heads)]
                      for l in range(cfg.layers)], dtype=np.uint32).reshape(cfg.layers, cfg.heads)
    return PairConnectModel(cfg, ps.arrays, seeds)


def pair_lookup(tokens, table: PairTable, W: Var | None = None) -> Var:
    """Rows for every ordered pair: entry ``(i, j)`` is ``W[slot(tok_i, tok_j)]``.

    Output shape ``tokens.shape + (m, d)``; the rows are copied into one fresh
    contiguous buffer.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    slots = sequence_slots(tokens, [table.hasher.seed], table.hasher.table_size)[0]
    return nx.gather_rows(W if W is not None else nx.const(table.table), slots, tag="pair")


_OFFDIAG: dict[int, np.ndarray] = {}


def _offdiag_cols(m: int) -> np.ndarray:
    """``(m, m-1)`` column indices ``j != i`` in increasing order."""
    if m not in _OFFDIAG:
        cols = np.arange(m)
        _OFFDIAG[m] = np.stack([np.delete(cols, i) for i in range(m)]).reshape(m, m - 1)
    return _OFFDIAG[m]


def head_forward(slots: np.ndarray, P: dict[str, Var], layer: int, head: int,
                 cfg: ModelConfig, rng=None, training: bool = False) -> Var:
    """One pooling head ``g`` over precomputed ``slots[..., m, m]``; returns ``[..., m, dp]``."""
    W = P[table_name(layer, head)]
    mlp = mlp_of(P, f"layer{layer}.head{head}.mlp", cfg.dropout)
    m = slots.shape[-1]
    if cfg.pooling == "pool-then-mlp":
        if cfg.retrieval == "fused":
            return mlp(nx.pair_sum(W, slots), rng, training)
        rows = nx.gather_rows(W, slots, tag="pair")
        nx.count_op("flops", "pair-sum", slots.size * W.shape[1])
        return mlp(nx.reduce_sum(rows, axis=-2), rng, training)
    if cfg.pooling == "per-pair-mlp":
        rows = nx.gather_rows(W, slots, tag="pair")
        return nx.reduce_sum(mlp(rows, rng, training), axis=-2)
    if m != cfg.seq_len:
        raise ShapeError(f"concat-project pooling is built for m={cfg.seq_len}, got m={m}")
    off = np.take_along_axis(slots, np.broadcast_to(_offdiag_cols(m), slots.shape[:-1] + (m - 1,)), -1)
    rows = nx.gather_rows(W, off, tag="pair")
    flat = nx.reshape(rows, slots.shape[:-1] + ((m - 1) * W.shape[1],))
    return mlp(flat, rng, training)


def multihead_forward(slots: np.ndarray, P: dict[str, Var], layer: int,
                      cfg: ModelConfig, rng=None, training: bool = False) -> Var:
    """Concatenate the heads of one layer; ``slots`` is ``[heads, ..., m, m]``."""
    heads = [head_forward(slots[h], P, layer, h, cfg, rng, training) for h in range(cfg.heads)]
    return nx.concat(heads, axis=-1)


def layer_forward(slots: np.ndarray, hidden: Var, P: dict[str, Var], layer: int,
                  cfg: ModelConfig, rng=None, training: bool = False) -> Var:
    if hidden.shape[-1] != cfg.d:
        raise ShapeError(f"layer expects width {cfg.d}, got {hidden.shape[-1]}")
    pre = f"layer{layer}"
    x_u = mlp_of(P, f"{pre}.unigram", cfg.dropout)(hidden, rng, training)
    pooled = multihead_forward(slots, P, layer, cfg, rng, training)
    x_p = mlp_of(P, f"{pre}.pair_proj", cfg.dropout)(pooled, rng, training)
    return mlp_of(P, f"{pre}.combiner", cfg.dropout)(nx.add(x_u, x_p), rng, training)


def model_forward(tokens, model: PairConnectModel, training: bool = False, rng=None,
                  tape: nx.Tape | None = None, P: dict[str, Var] | None = None,
                  slots: np.ndarray | None = None) -> Var:
    """Logits ``[B, m, vocab]`` for token ids ``[B, m]`` (or ``[m]``)."""
    cfg = model.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if P is None:
        P = bind(model.params, tape)
    if slots is None:
        slots = model.slots(tokens)
    x = embed(P, tokens, cfg)
    for layer in range(cfg.layers):
        x = layer_forward(slots[layer], x, P, layer, cfg, rng, training)
    return nx.matmul(x, P["out_proj"])
