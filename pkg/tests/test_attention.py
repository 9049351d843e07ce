import math

import numpy as np
import pytest

from pairconnect import numerics as nx
from pairconnect.attention import attention_head_forward, attention_weights, encoder_layer_forward, mha_forward
from pairconnect.layers import ModelConfig, bind
from pairconnect.models import forward, init_model
from pairconnect.numerics import ConfigError


def cfg(**kw):
    base = dict(kind="transformer", vocab_size=30, layers=1, heads=2, d=8, d_hidden=16, seq_len=5,
                dropout=0.0, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def ln(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=-1, keepdims=True) + eps)


def test_single_position_returns_v():
    rng = nx.make_rng(0)
    X, wq, wk, wv = (rng.standard_normal(s) for s in [(1, 4), (4, 3), (4, 3), (4, 3)])
    out = attention_head_forward(*map(nx.const, (X, wq, wk, wv))).value
    np.testing.assert_allclose(out, X @ wv, rtol=1e-14)


def test_zero_queries_average_values():
    rng = nx.make_rng(1)
    X, wk, wv = rng.standard_normal((6, 4)), rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    out = attention_head_forward(nx.const(X), nx.const(np.zeros((4, 3))), nx.const(wk), nx.const(wv)).value
    np.testing.assert_allclose(out, np.tile((X @ wv).mean(axis=0), (6, 1)), rtol=1e-13)


def test_head_matches_loop_oracle():
    rng = nx.make_rng(2)
    m, d, dh = 4, 5, 3
    X, wq, wk, wv = rng.standard_normal((m, d)), *(rng.standard_normal((d, dh)) for _ in range(3))
    q, k, v = X @ wq, X @ wk, X @ wv
    want = np.zeros((m, dh))
    for i in range(m):
        s = [sum(q[i, t] * k[j, t] for t in range(dh)) / math.sqrt(dh) for j in range(m)]
        e = [math.exp(x - max(s)) for x in s]
        for j in range(m):
            want[i] += e[j] / sum(e) * v[j]
    got = attention_head_forward(*map(nx.const, (X, wq, wk, wv))).value
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_identical_heads_agree():
    c = cfg(heads=2, d=8)
    model = init_model(c)
    P = model.params
    # copy head 0's slice of every projection onto head 1
    for name in ("wq", "wk", "wv"):
        P[f"layer0.{name}"][:, 4:] = P[f"layer0.{name}"][:, :4]
    X = nx.const(nx.make_rng(3).standard_normal((1, 5, 8)))
    att = attention_weights(X, bind(P, None), 0, 2).value
    np.testing.assert_array_equal(att[0, 0], att[0, 1])


def test_attention_rows_are_distributions():
    model = init_model(cfg())
    X = nx.const(nx.make_rng(4).standard_normal((2, 5, 8)))
    att = attention_weights(X, bind(model.params, None), 0, 2).value
    assert att.shape == (2, 2, 5, 5)
    np.testing.assert_allclose(att.sum(axis=-1), 1, atol=1e-14)


def test_zero_weights_give_double_layer_norm():
    c = cfg()
    model = init_model(c)
    for k, v in model.params.items():
        if k.startswith("layer0") and ".ln" not in k:
            v[:] = 0
    X = nx.make_rng(5).standard_normal((1, 5, 8))
    out = encoder_layer_forward(nx.const(X), bind(model.params, None), 0, c).value
    np.testing.assert_allclose(out, ln(ln(X)), rtol=1e-12, atol=1e-14)


def test_mha_matches_per_head_composition():
    c = cfg(heads=2, d=8)
    model = init_model(c)
    P = model.params
    X = nx.make_rng(6).standard_normal((5, 8))
    heads = [attention_head_forward(nx.const(X), *(nx.const(P[f"layer0.{n}"][:, 4 * h:4 * h + 4])
                                                   for n in ("wq", "wk", "wv"))).value for h in range(2)]
    want = np.concatenate(heads, axis=-1) @ P["layer0.wo"]
    got = mha_forward(nx.const(X[None]), bind(P, None), 0, 2).value[0]
    np.testing.assert_allclose(got, want, rtol=1e-12)


@pytest.mark.parametrize("m", [1, 5, 64])
def test_shapes(m):
    out = forward(init_model(cfg(seq_len=m, layers=2)), np.full((3, m), 4))
    assert out.shape == (3, m, 30)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        cfg(d=10, heads=4)


def test_attention_flops_grow_quadratically():
    def attn_flops(m):
        with nx.count_ops() as ops:
            forward(init_model(cfg(seq_len=m)), np.full((1, m), 3))
        return ops.flops["attention"]

    assert attn_flops(64) == 4 * attn_flops(32)


def test_dropout_only_in_training():
    model = init_model(cfg(dropout=0.3))
    toks = np.full((1, 5), 7)
    a = forward(model, toks).value
    assert np.array_equal(a, forward(model, toks).value)
    assert not np.array_equal(a, forward(model, toks, training=True, rng=nx.make_rng(0)).value)
