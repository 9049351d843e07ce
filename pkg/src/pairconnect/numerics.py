"""Dense tensor ops on numpy arrays with a minimal reverse-mode tape.

Every op takes :class:`Var` inputs. When none of the inputs is attached to a
:class:`Tape` the op just computes its value (inference mode); otherwise it
appends a node whose backward closure maps the output gradient to input
gradients. Node ids are assigned in creation order, so reverse id order is a
valid reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import special

from . import kernels


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tape


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[int, ...]
    backward: Callable[[np.ndarray], tuple] | None


class Tape:
    """Append-only record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> "Var":
        self.nodes.append(Node(name or "leaf", (), None))
        return Var(np.asarray(value), self, len(self.nodes) - 1)

    def record(self, op, value, inputs, backward) -> "Var":
        ids = tuple(v.id for v in inputs)
        self.nodes.append(Node(op, ids, backward))
        return Var(value, self, len(self.nodes) - 1)


@dataclass(eq=False)
class Var:
    value: np.ndarray
    tape: Tape | None = None
    id: int = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"


def const(value) -> Var:
    return Var(np.asarray(value))


def _tape(*vs):
    for v in vs:
        if v.tape is not None:
            return v.tape
    return None


def _finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise FloatingPointError(f"{op} produced a non-finite value")
    return x


def _out(op, value, inputs, backward, checked=None):
    # ``checked`` lets an op vouch for its output by checking a smaller array
    # it was copied from (a gather is finite iff the rows it read are).
    _finite(value if checked is None else checked, op)
    tape = _tape(*inputs)
    if tape is None:
        return Var(value)
    return tape.record(op, value, inputs, backward)


def backward(tape: Tape, loss: Var) -> dict[int, np.ndarray]:
    """One reverse sweep from a scalar ``loss``; returns node id -> gradient."""
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for nid in range(loss.id, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        for src, gi in zip(node.inputs, node.backward(g)):
            if gi is None:
                continue
            if src in grads:
                grads[src] = grads[src] + gi
            else:
                grads[src] = gi
    return grads


# ---------------------------------------------------------------------------
# Work counters


@dataclass
class OpCounter:
    """Floating-point operation and table-lookup tallies, keyed by tag."""

    flops: Counter = field(default_factory=Counter)
    lookups: Counter = field(default_factory=Counter)

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())


_counter: OpCounter | None = None


@contextlib.contextmanager
def count_ops():
    global _counter
    prev, _counter = _counter, OpCounter()
    try:
        yield _counter
    finally:
        _counter = prev


def count_op(kind, tag, n):
    if _counter is not None:
        getattr(_counter, kind)[tag] += int(n)


# ---------------------------------------------------------------------------
# Random numbers and initialisation


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, *stream)``; identical on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def init_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform draws strictly inside ``(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    bound = 1.0 / math.sqrt(fan_in)
    # (k + 0.5) / 2**53 maps the 53-bit integers onto the open unit interval
    k = rng.integers(0, 2**53, size=shape, dtype=np.int64)
    u = (k.astype(np.float64) + 0.5) / 2.0**53
    return (bound * (2.0 * u - 1.0)).astype(dtype)


# ---------------------------------------------------------------------------
# Ops


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Var, b: Var, tag: str = "dense") -> Var:
    """``a @ b`` for ``a[..., m, k]`` and either ``b[k, n]`` or ``b[..., k, n]``."""
    av, bv = a.value, b.value
    if bv.ndim < 2 or av.ndim < 1 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {av.shape} @ {bv.shape}")
    out = np.matmul(av, bv)
    count_op("flops", tag, 2 * out.size * av.shape[-1])

    def back(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        if bv.ndim == 2:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _out("matmul", out, (a, b), back)


def add(a: Var, b: Var) -> Var:
    sa, sb = a.shape, b.shape
    return _out("add", a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return _out("mul", av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a: Var, c: float) -> Var:
    return _out("scale", a.value * c, (a,), lambda g: (g * c,))


def reduce_sum(a: Var, axis=None, keepdims: bool = False) -> Var:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _out("sum", np.sum(a.value, axis=axis, keepdims=keepdims), (a,), back)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _out("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Var, axes) -> Var:
    inv = np.argsort(axes)
    return _out("transpose", np.transpose(a.value, axes), (a,),
                lambda g: (np.transpose(g, inv),))


def concat(vs: list[Var], axis: int = -1) -> Var:
    if len(vs) == 1:
        return vs[0]
    sizes = np.cumsum([v.shape[axis] for v in vs])[:-1]
    return _out("concat", np.concatenate([v.value for v in vs], axis=axis), tuple(vs),
                lambda g: tuple(np.split(g, sizes, axis=axis)))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LD_SQRTPI = np.sqrt(np.longdouble("3.14159265358979323846264338327950288"))


def erf_longdouble(x) -> np.ndarray:
    """erf in extended precision (scipy only has float32/float64 loops).

    Maclaurin series for ``|x| <= 2.5``; continued fraction for ``erfc`` above.
    """
    x = np.asarray(x, dtype=np.longdouble)
    out = np.empty_like(x)
    a = np.abs(x)
    small = a <= 2.5
    xs = x[small]
    if xs.size:
        x2 = xs * xs
        term = xs.copy()
        total = xs.copy()
        n = 0
        while True:
            n += 1
            term = term * -x2 / n
            add = term / (2 * n + 1)
            total = total + add
            if np.max(np.abs(add)) < 1e-25:
                break
        out[small] = 2 * total / _LD_SQRTPI
    xl = a[~small]
    if xl.size:
        frac = xl.copy()
        for k in range(400, 0, -1):
            frac = xl + np.longdouble(k) / 2 / frac
        erfc = np.exp(-xl * xl) / _LD_SQRTPI / frac
        out[~small] = np.sign(x[~small]) * (1 - erfc)
    return out


def _erf(x: np.ndarray) -> np.ndarray:
    if x.dtype == np.longdouble and np.longdouble != np.float64:
        return erf_longdouble(x)
    return special.erf(x)


def _compiled(dtype) -> bool:
    return dtype in (np.float32, np.float64)


def gelu(x: Var) -> Var:
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    xv = x.value
    cdf = 0.5 * (1.0 + _erf(xv * _INV_SQRT2))
    cdf = cdf.astype(xv.dtype, copy=False)

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return _out("gelu", xv * cdf, (x,), back)


def softmax_rows(x: Var) -> Var:
    """Softmax over the last axis with per-row max subtraction."""
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _out("softmax", y, (x,), back)


def dropout(x: Var, rate: float, rng: np.random.Generator | None, training: bool) -> Var:
    """Inverted dropout; the identity when ``training`` is off or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return _out("dropout", x.value * keep, (x,), lambda g: (g * keep,))


def _check_indices(idx: np.ndarray, size: int):
    if idx.size:
        lo, hi = idx.min(), idx.max()
        if lo < 0 or hi >= size:
            bad = lo if lo < 0 else hi
            raise IndexError(f"row index {bad} out of range for table with {size} rows")


def gather_rows(table: Var, indices, tag: str = "embedding") -> Var:
    """Copy rows of ``table[K, d]``; output shape is ``indices.shape + (d,)``.

    The backward pass scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(indices, dtype=np.int64)
    K, d = table.shape
    _check_indices(idx, K)
    count_op("lookups", tag, idx.size)
    out = np.take(table.value, idx, axis=0)
    src = table.value if table.value.size < out.size else None

    def back(g):
        flat_g = np.ascontiguousarray(g.reshape(-1, d))
        if _compiled(g.dtype):
            return (kernels.scatter_add_rows(idx.reshape(-1), flat_g, K),)
        gt = np.zeros((K, d), dtype=g.dtype)
        np.add.at(gt, idx.reshape(-1), flat_g)
        return (gt,)

    return _out("gather_rows", out, (table,), back, checked=src)


def pair_sum(table: Var, slots: np.ndarray, tag: str = "pair") -> Var:
    """``out[..., i, :] = sum_j table[slots[..., i, j]]`` in one fused pass.

    Equivalent to ``reduce_sum(gather_rows(table, slots), axis=-2)`` but reads each
    row straight from the table instead of staging an ``m*m*d`` buffer.
    """
    slots = np.ascontiguousarray(slots, dtype=np.int64)
    K, d = table.shape
    _check_indices(slots, K)
    count_op("lookups", tag, slots.size)
    count_op("flops", "pair-sum", slots.size * d)
    lead = slots.shape[:-1]
    flat = slots.reshape(-1, slots.shape[-1])
    if _compiled(table.dtype):
        out = kernels.pair_sum_forward(table.value, flat)
    else:
        out = np.take(table.value, flat, axis=0).sum(axis=1)
    out = out.reshape(*lead, d)

    def back(g):
        flat_g = np.ascontiguousarray(g.reshape(-1, d))
        if _compiled(g.dtype):
            return (kernels.pair_sum_backward(flat_g, flat, K),)
        gt = np.zeros((K, d), dtype=g.dtype)
        np.add.at(gt, flat, np.repeat(flat_g[:, None, :], flat.shape[1], axis=1))
        return (gt,)

    return _out("pair_sum", out, (table,), back)


def layer_norm(x: Var, gain: Var, shift: Var, eps: float = 1e-5) -> Var:
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value
    n = xv.shape[-1]

    def back(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, n).sum(axis=0)
        gshift = g.reshape(-1, n).sum(axis=0)
        return dx, ggain, gshift

    return _out("layer_norm", xhat * gv + shift.value, (x, gain, shift), back)


def cross_entropy_rows(logits: Var, targets, ignore=None) -> Var:
    """Mean ``-log softmax(logits[r])[targets[r]]`` over rows not in ``ignore``.

    ``ignore`` is a boolean row mask or an iterable of row positions. With
    every row ignored the loss is 0 and the gradient is zero.
    """
    lv = logits.value
    if lv.ndim != 2:
        raise ShapeError(f"cross_entropy_rows expects [rows, classes], got {lv.shape}")
    rows, V = lv.shape
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1)
    if tgt.shape[0] != rows:
        raise ShapeError(f"{rows} logit rows but {tgt.shape[0]} targets")
    keep = np.ones(rows, dtype=bool)
    if ignore is not None:
        ign = np.asarray(ignore if isinstance(ignore, np.ndarray) else list(ignore))
        if ign.dtype == bool:
            keep &= ~ign.reshape(-1)
        elif ign.size:
            keep[ign.astype(np.int64)] = False
    kept = np.flatnonzero(keep)
    t = tgt[kept]
    if t.size and (t.min() < 0 or t.max() >= V):
        bad = t.min() if t.min() < 0 else t.max()
        raise IndexError(f"target class {bad} out of range for {V} classes")
    count = kept.size
    if count == 0:
        return _out("cross_entropy", np.zeros((), dtype=lv.dtype), (logits,),
                    lambda g: (np.zeros_like(lv),))
    sub = lv[kept]
    z = sub - sub.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(count), t]
    loss = np.asarray(nll.sum() / count, dtype=lv.dtype)

    def back(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(count), t] -= 1.0
        full = np.zeros_like(lv)
        full[kept] = p * (g / count)
        return (full,)

    return _out("cross_entropy", loss, (logits,), back)


# ---------------------------------------------------------------------------
# Finite differences


def finite_diff_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    """Max relative error between ``grads`` and central differences of ``f``.

    ``f`` re-evaluates the loss from the current contents of ``params``, which
    are perturbed in place and restored. Where ``|grad| < 1e-8`` the absolute
    error is used instead. ``params`` may be an extended-precision copy of the
    parameters that produced ``grads``; ``f`` may then return a long double.
    """
    if h <= 0:
        raise ConfigError("finite difference step must be positive")
    worst = 0.0
    for name in names or params:
        p = params[name]
        flat = p.reshape(-1)
        g = np.asarray(grads.get(name, np.zeros_like(p))).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            num = float((fp - fm) / (2 * h))
            err = abs(num - float(g[i]))
            scale_ = max(abs(num), abs(float(g[i])))
            worst = max(worst, err / scale_ if scale_ >= 1e-8 else err)
    return worst
