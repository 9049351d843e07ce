"""Whole-model gradient checks against central differences.

The analytic side is the ordinary backward pass at the model's own precision.
The numerical side re-runs the forward pass on an extended-precision copy of
the parameters and differentiates the masked cross-entropy *minus its
constant* ``ln V``, computed as ``(c - z_t) + log1p(mean(expm1(z - c)))``.
Dropping the constant keeps the loss small, so ``f(x+h) - f(x-h)`` is not
swamped by rounding of an O(1) value; near-zero gradients can then be
resolved to the 1e-6 relative tolerance with ``h = 1e-5``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import numerics as nx
from .layers import ModelConfig, bind, grads_by_name
from .models import Model, forward, init_model


def excess_cross_entropy(logits: np.ndarray, targets: np.ndarray, keep: np.ndarray):
    """Mean masked cross-entropy minus ``ln V``; 0 when no row is kept."""
    z = logits[keep]
    if z.shape[0] == 0:
        return logits.dtype.type(0)
    t = targets[keep]
    c = z.mean(axis=1, keepdims=True)
    rows = (c[:, 0] - z[np.arange(z.shape[0]), t]) + np.log1p(np.expm1(z - c).mean(axis=1))
    return rows.mean()


def analytic_grads(model: Model, tokens, targets, ignore) -> tuple[float, dict[str, np.ndarray]]:
    tape = nx.Tape()
    P = bind(model.params, tape)
    logits = forward(model, tokens, P=P)
    V = logits.shape[-1]
    loss = nx.cross_entropy_rows(nx.reshape(logits, (-1, V)), np.asarray(targets).reshape(-1),
                                 np.asarray(ignore).reshape(-1))
    return float(loss.value), grads_by_name(P, nx.backward(tape, loss))


def model_gradcheck(model: Model, tokens, targets, ignore, h: float = 1e-5,
                    extended: bool = True) -> float:
    """Max relative error of the model's backward pass over every parameter."""
    _, grads = analytic_grads(model, tokens, targets, ignore)
    dtype = np.longdouble if extended else model.params["embed"].dtype
    probe = dataclasses.replace(model, params={k: v.astype(dtype) for k, v in model.params.items()})
    tgt = np.asarray(targets).reshape(-1)
    keep = ~np.asarray(ignore, dtype=bool).reshape(-1)

    def f():
        logits = forward(probe, tokens).value
        return excess_cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt, keep)

    return nx.finite_diff_check(f, probe.params, grads, h)


def small_config(kind: str, pooling: str = "pool-then-mlp", seed: int = 0,
                 dtype: str = "float64") -> ModelConfig:
    """2-layer, 2-head, d=8 model over 17 ids with m=6 and K=31."""
    return ModelConfig(kind=kind, vocab_size=17, layers=2, heads=2, d=8, d_hidden=8,
                       table_size=31, pooling=pooling, pair_dim=8, seq_len=6, dropout=0.0,
                       seed=seed, dtype=dtype)


def small_problem(seed: int = 0, batch: int = 2, m: int = 6, vocab: int = 17):
    """Random ids, targets and a mask that keeps at least one row."""
    rng = nx.make_rng(seed, 99)
    tokens = rng.integers(0, vocab, size=(batch, m))
    targets = rng.integers(2, vocab, size=batch * m)
    ignore = rng.random(batch * m) < 0.5
    ignore[0] = False
    return tokens, targets, ignore


def run_small_gradcheck(kind: str, pooling: str = "pool-then-mlp", seed: int = 0,
                        dtype: str = "float64", h: float = 1e-5) -> float:
    model = init_model(small_config(kind, pooling, seed, dtype))
    return model_gradcheck(model, *small_problem(seed), h=h)
