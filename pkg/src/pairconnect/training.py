"""MLM loss, Adam, the train/eval loop, metrics logging and checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import numerics as nx
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import ModelConfig, bind, grads_by_name
from .mlmdata import IGNORE, BatchStream, DataConfig, MaskedBatch, fixed_eval_batches
from .models import Model, forward, init_model
from .numerics import ConfigError

METRICS_HEADER = ("step", "split", "loss", "wall_ms")


def mlm_loss(logits: nx.Var, batch: MaskedBatch) -> nx.Var:
    """Cross-entropy over masked positions only; 0 with zero gradient when none are masked."""
    V = logits.shape[-1]
    tgt = batch.targets.reshape(-1)
    ignore = tgt == IGNORE
    return nx.cross_entropy_rows(nx.reshape(logits, (-1, V)), np.where(ignore, 0, tgt), ignore)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place. Refuses non-finite gradients."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise nx.ShapeError(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}; step refused")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Configuration


# Short names accepted in config files and on the command line.
ALIASES = {"L": "layers", "l": "heads", "K": "table_size", "model": "kind", "m": "seq_len",
           "batch": "batch_size", "U": "vocab_size"}


@dataclass
class TrainConfig:
    """Everything a training run depends on.

    ``seed`` drives model init, hash seeds (unless ``hash_seed`` is set), data
    order, masking and dropout. With ``wall_clock`` off the ``wall_ms``
    column is written as 0 so metrics files are reproducible byte for byte.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    eval_every: int = 100
    eval_seed: int = 12345
    wall_clock: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.steps < 0 or self.eval_every < 1:
            raise ConfigError("steps must be >= 0 and eval_every >= 1")
        if self.model.seq_len != self.data.seq_len:
            raise ConfigError(f"model seq_len {self.model.seq_len} != data seq_len {self.data.seq_len}")

    @property
    def seed(self) -> int:
        return self.model.seed

    def to_flat(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("model", "data")}
        out.update(dataclasses.asdict(self.data))
        out.update(self.model.to_dict())
        return out

    @classmethod
    def from_flat(cls, values: dict) -> "TrainConfig":
        """Build from flat ``key -> value`` pairs (strings are parsed by field type)."""
        model_f = {f.name: f for f in fields(ModelConfig)}
        data_f = {f.name: f for f in fields(DataConfig)}
        own_f = {f.name: f for f in fields(cls) if f.name not in ("model", "data")}
        model_kw, data_kw, own_kw = {}, {}, {}
        for raw_key, raw in values.items():
            key = ALIASES.get(raw_key, raw_key).replace("-", "_")
            known = False
            for table, kw in ((model_f, model_kw), (data_f, data_kw), (own_f, own_kw)):
                if key in table:
                    kw[key] = _parse_value(table[key], raw, key)
                    known = True
            if not known:
                raise ConfigError(f"unknown config key {raw_key!r}")
        return cls(model=ModelConfig(**model_kw), data=DataConfig(**data_kw), **own_kw)

    def replace(self, **flat) -> "TrainConfig":
        merged = self.to_flat()
        merged.update({ALIASES.get(k, k): v for k, v in flat.items()})
        return TrainConfig.from_flat(merged)


def _parse_value(f: dataclasses.Field, raw, key: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    default = f.default if f.default is not dataclasses.MISSING else None
    try:
        if text.lower() == "none" and default is None:
            return None
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int) or (default is None and f.type in ("int | None", int)):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return text


def read_flat_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; blank lines are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, **overrides) -> TrainConfig:
    values = read_flat_config(path) if path else {}
    values.update(overrides)
    return TrainConfig.from_flat(values)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsLog:
    rows: list[tuple[int, str, float, float]] = field(default_factory=list)

    def add(self, step: int, split: str, loss: float, wall_ms: float):
        self.rows.append((step, split, float(loss), float(wall_ms)))

    def losses(self, split: str = "train") -> list[float]:
        return [r[2] for r in self.rows if r[1] == split]

    def write_csv(self, path, append: bool = False) -> None:
        path = Path(path)
        fresh = not (append and path.exists())
        with open(path, "w" if fresh else "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if fresh:
                w.writerow(METRICS_HEADER)
            for step, split, loss, ms in self.rows:
                w.writerow((step, split, repr(loss), f"{ms:.3f}"))

    @classmethod
    def read_csv(cls, path) -> "MetricsLog":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            if tuple(next(r)) != METRICS_HEADER:
                raise ValueError(f"{path}: not a metrics file")
            return cls([(int(a), b, float(c), float(d)) for a, b, c, d in r])


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    n_masked: int


def evaluate(model: Model, batches: list[MaskedBatch]) -> EvalResult:
    """Mean cross-entropy and accuracy over every masked position; dropout off."""
    losses, correct = [], 0
    for b in batches:
        keep = b.targets.reshape(-1) != IGNORE
        if not keep.any():
            continue
        logits = forward(model, b.inputs).value
        z = logits.reshape(-1, logits.shape[-1])[keep].astype(np.float64)
        t = b.targets.reshape(-1)[keep]
        losses.extend(logsumexp(z, axis=1) - z[np.arange(t.size), t])
        correct += int((z.argmax(axis=1) == t).sum())
    n = len(losses)
    if n == 0:
        return EvalResult(0.0, 0.0, 0)
    return EvalResult(math.fsum(losses) / n, correct / n, n)


# ---------------------------------------------------------------------------
# Training loop


class Trainer:
    """Owns the model, optimizer and data stream of one run.

    Every random draw of step ``t`` (masking and dropout) comes from generators
    keyed by ``(seed, t)`` or by the stream position, so a run resumed from a
    checkpoint takes exactly the same steps as an uninterrupted one.
    """

    def __init__(self, cfg: TrainConfig, train_set: np.ndarray, eval_set: np.ndarray | None = None,
                 model: Model | None = None, adam: AdamState | None = None,
                 step: int = 0, stream_pos: tuple[int, int] = (0, 0)):
        self.cfg = cfg
        self.model = model if model is not None else init_model(cfg.model)
        self.adam = adam if adam is not None else AdamState.for_params(
            self.model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        self.stream = BatchStream(train_set, cfg.data, *stream_pos)
        self.eval_batches = fixed_eval_batches(eval_set, cfg.data, cfg.eval_seed) if eval_set is not None else []
        self.step = step
        self.log = MetricsLog()

    def _now(self) -> float:
        return time.perf_counter() * 1e3 if self.cfg.wall_clock else 0.0

    def train_step(self) -> float:
        batch = next(self.stream)
        tape = nx.Tape()
        P = bind(self.model.params, tape)
        rng = nx.make_rng(self.cfg.seed, 5, self.step)
        try:
            logits = forward(self.model, batch.inputs, training=True, rng=rng, P=P)
            loss = mlm_loss(logits, batch)
            grads = grads_by_name(P, nx.backward(tape, loss))
            adam_step(self.model.params, grads, self.adam)
        except FloatingPointError as e:
            raise FloatingPointError(f"step {self.step}: {e}") from None
        self.step += 1
        return float(loss.value)

    def evaluate(self) -> EvalResult:
        return evaluate(self.model, self.eval_batches)

    def run(self, n: int) -> MetricsLog:
        """Take ``n`` steps, logging each train loss and an eval loss every ``eval_every``."""
        if n < 1:
            raise ConfigError("number of steps must be at least 1")
        for _ in range(n):
            t0 = self._now()
            loss = self.train_step()
            self.log.add(self.step, "train", loss, self._now() - t0)
            if self.eval_batches and self.step % self.cfg.eval_every == 0:
                t0 = self._now()
                res = self.evaluate()
                self.log.add(self.step, "eval", res.loss, self._now() - t0)
        return self.log

    def save(self, path, with_optimizer: bool = True) -> None:
        epoch, cursor = self.stream.state()
        save_checkpoint(path, self.model, self.cfg.to_flat(),
                        adam=self.adam if with_optimizer else None,
                        rng={"scheme": "pcg64-seedseq", "seed": self.cfg.seed, "step": self.step,
                             "epoch": epoch, "cursor": cursor})

    @classmethod
    def resume(cls, path, train_set, eval_set=None) -> "Trainer":
        ck = load_checkpoint(path)
        cfg = TrainConfig.from_flat(ck.config)
        rng = ck.rng
        return cls(cfg, train_set, eval_set, model=ck.model, adam=ck.adam,
                   step=int(rng.get("step", 0)),
                   stream_pos=(int(rng.get("epoch", 0)), int(rng.get("cursor", 0))))


def train_steps(cfg: TrainConfig, dataset: np.ndarray, n: int,
                eval_set: np.ndarray | None = None) -> MetricsLog:
    return Trainer(cfg, dataset, eval_set).run(n)
