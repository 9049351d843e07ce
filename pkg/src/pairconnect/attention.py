"""Transformer-encoder baseline: multi-head dot-product attention, post-norm blocks.

Block: ``Y = LN(X + dropout(MHA(X)))``, ``Z = LN(Y + FF(Y))`` where ``FF`` is the
same bias-free 2-layer GELU MLP PairConnect uses (its last dropout is the
residual-branch dropout). Scores are scaled by ``1/sqrt(d_head)``.

The Q/K/V weights are stored as ``[d, d]`` matrices whose column block
``h*d_head:(h+1)*d_head`` is head ``h``'s ``[d, d_head]`` projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import ModelConfig, ParamStore, Var, bind, count_params, embed, mlp_of


@dataclass
class TransformerModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def parameter_report(self) -> dict:
        return count_params(self.params)


def init_transformer(cfg: ModelConfig) -> TransformerModel:
    if cfg.kind != "transformer":
        raise ValueError(f"config is for {cfg.kind!r}, not transformer")
    ps = ParamStore(cfg.np_dtype, nx.make_rng(cfg.seed, 1))
    d = cfg.d
    ps.uniform("embed", (cfg.vocab_size, d), fan_in=d)
    for layer in range(cfg.layers):
        pre = f"layer{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            ps.uniform(f"{pre}.{name}", (d, d))
        ps.mlp2(f"{pre}.ff", d, cfg.d_hidden, d)
        ps.ones(f"{pre}.ln1.gain", (d,))
        ps.zeros(f"{pre}.ln1.shift", (d,))
        ps.ones(f"{pre}.ln2.gain", (d,))
        ps.zeros(f"{pre}.ln2.shift", (d,))
    ps.uniform("out_proj", (d, cfg.vocab_size), fan_in=d)
    return TransformerModel(cfg, ps.arrays)


def attention_head_forward(X: Var, wq: Var, wk: Var, wv: Var) -> Var:
    """Single head ``softmax(Q K^T / sqrt(d_head)) V`` for ``X[m, d]``."""
    q, k, v = nx.matmul(X, wq), nx.matmul(X, wk), nx.matmul(X, wv)
    kt = nx.transpose(k, tuple(range(k.value.ndim - 2)) + (k.value.ndim - 1, k.value.ndim - 2))
    scores = nx.scale(nx.matmul(q, kt, tag="attention"), 1.0 / math.sqrt(wq.shape[1]))
    return nx.matmul(nx.softmax_rows(scores), v, tag="attention")


def _split_heads(x: Var, heads: int) -> Var:
    *lead, m, d = x.shape
    x = nx.reshape(x, (*lead, m, heads, d // heads))
    n = len(lead)
    return nx.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Var) -> Var:
    *lead, h, m, dh = x.shape
    n = len(lead)
    x = nx.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return nx.reshape(x, (*lead, m, h * dh))


def attention_weights(X: Var, P: dict[str, Var], layer: int, heads: int) -> Var:
    """Row-stochastic attention matrices ``[..., heads, m, m]``."""
    pre = f"layer{layer}"
    q = _split_heads(nx.matmul(X, P[f"{pre}.wq"]), heads)
    k = _split_heads(nx.matmul(X, P[f"{pre}.wk"]), heads)
    nd = k.value.ndim
    kt = nx.transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = nx.scale(nx.matmul(q, kt, tag="attention"), 1.0 / math.sqrt(q.shape[-1]))
    return nx.softmax_rows(scores)


def mha_forward(X: Var, P: dict[str, Var], layer: int, heads: int) -> Var:
    pre = f"layer{layer}"
    att = attention_weights(X, P, layer, heads)
    v = _split_heads(nx.matmul(X, P[f"{pre}.wv"]), heads)
    ctx = _merge_heads(nx.matmul(att, v, tag="attention"))
    return nx.matmul(ctx, P[f"{pre}.wo"])


def encoder_layer_forward(X: Var, P: dict[str, Var], layer: int, cfg: ModelConfig,
                          rng=None, training: bool = False) -> Var:
    pre = f"layer{layer}"
    a = nx.dropout(mha_forward(X, P, layer, cfg.heads), cfg.dropout, rng, training)
    Y = nx.layer_norm(nx.add(X, a), P[f"{pre}.ln1.gain"], P[f"{pre}.ln1.shift"])
    f = mlp_of(P, f"{pre}.ff", cfg.dropout)(Y, rng, training)
    return nx.layer_norm(nx.add(Y, f), P[f"{pre}.ln2.gain"], P[f"{pre}.ln2.shift"])


def transformer_forward(tokens, model: TransformerModel, training: bool = False, rng=None,
                        tape: nx.Tape | None = None, P: dict[str, Var] | None = None) -> Var:
    """Logits ``[B, m, vocab]`` for token ids ``[B, m]`` (or ``[m]``)."""
    cfg = model.config
    if P is None:
        P = bind(model.params, tape)
    x = embed(P, tokens, cfg)
    for layer in range(cfg.layers):
        x = encoder_layer_forward(x, P, layer, cfg, rng, training)
    return nx.matmul(x, P["out_proj"])
