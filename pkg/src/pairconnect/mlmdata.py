"""Corpus ingestion, vocabulary, chunking and MLM masking.

Id conventions: 0 is PAD, 1 is MASK, corpus words start at 2. A selected
sequence gets ``max(1, round(p_tok * n_real))`` of its real-word positions
replaced by MASK; PAD is never masked. Unselected sequences carry no targets.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .numerics import ConfigError, make_rng

PAD = 0
MASK = 1
FIRST_WORD = 2
IGNORE = -100


class DataError(ValueError):
    pass


@dataclass
class Vocab:
    words: list[str]  # words[k] has id k + FIRST_WORD

    def __post_init__(self):
        self.index = {w: i + FIRST_WORD for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise DataError("vocabulary words must be unique")

    def __len__(self):
        return len(self.words)

    @property
    def size(self) -> int:
        """Total id count including PAD and MASK."""
        return len(self.words) + FIRST_WORD

    def encode(self, tokens: Iterable[str], unk: str | None = "<unk>") -> np.ndarray:
        fallback = self.index.get(unk) if unk is not None else None
        out = []
        for t in tokens:
            i = self.index.get(t, fallback)
            if i is None:
                raise DataError(f"out-of-vocabulary token {t!r}")
            out.append(i)
        return np.asarray(out, dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        names = {PAD: "<pad>", MASK: "<mask>"}
        return [names[i] if i in names else self.words[i - FIRST_WORD] for i in map(int, ids)]

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w, i in self.index.items():
                fh.write(f"{w}\t{i}\n")

    @classmethod
    def load_tsv(cls, path) -> "Vocab":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    w, i = line.rstrip("\n").split("\t")
                    pairs.append((int(i), w))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(FIRST_WORD, FIRST_WORD + len(pairs))):
            raise DataError(f"{path}: ids must be contiguous from {FIRST_WORD}")
        return cls([w for _, w in pairs])


def read_tokens(paths: str | Path | Sequence[str | Path]) -> list[str]:
    """Whitespace tokens of one or more UTF-8 text files, in order."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    tokens: list[str] = []
    for p in paths:
        tokens.extend(Path(p).read_text(encoding="utf-8").split())
    return tokens


def build_vocab(tokens: Iterable[str]) -> Vocab:
    """Ids by descending frequency, ties broken lexicographically."""
    counts = Counter(tokens)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocab(sorted(counts, key=lambda w: (-counts[w], w)))


def chunk_sequences(ids, m: int) -> np.ndarray:
    """Non-overlapping length-``m`` windows; the last one is right-padded with PAD."""
    if m < 2:
        raise ConfigError("sequence length must be at least 2")
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n = math.ceil(ids.size / m)
    out = np.full((n, m), PAD, dtype=np.int64)
    out.reshape(-1)[: ids.size] = ids
    return out


@dataclass
class DataConfig:
    seq_len: int = 128
    batch_size: int = 32
    p_tok: float = 0.15
    p_seq: float = 0.90
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_tok < 1.0:
            raise ConfigError(f"p_tok must lie in (0, 1), got {self.p_tok}")
        if not 0.0 <= self.p_seq <= 1.0:
            raise ConfigError(f"p_seq must lie in [0, 1], got {self.p_seq}")
        if self.seq_len < 2:
            raise ConfigError("sequence length must be at least 2")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")


@dataclass
class MaskedBatch:
    inputs: np.ndarray  # [B, m]
    targets: np.ndarray  # [B, m], IGNORE where nothing is predicted
    mask_positions: list[np.ndarray]
    pad_mask: np.ndarray  # [B, m] bool, True at PAD

    @property
    def n_masked(self) -> int:
        return int((self.targets != IGNORE).sum())


def mask_count(n_real: int, p_tok: float) -> int:
    # round half up, at least one
    return max(1, int(math.floor(p_tok * n_real + 0.5)))


def apply_mlm_mask(seq, cfg: DataConfig, rng: np.random.Generator):
    """Mask one sequence; returns ``(inputs, targets, positions)``."""
    seq = np.asarray(seq, dtype=np.int64)
    real = np.flatnonzero(seq >= FIRST_WORD)
    if real.size == 0:
        raise DataError("sequence has no real words to mask")
    inputs = seq.copy()
    targets = np.full(seq.shape, IGNORE, dtype=np.int64)
    if rng.random() >= cfg.p_seq:
        return inputs, targets, np.empty(0, dtype=np.int64)
    pos = np.sort(rng.choice(real, size=mask_count(real.size, cfg.p_tok), replace=False))
    targets[pos] = seq[pos]
    inputs[pos] = MASK
    return inputs, targets, pos


def mask_batch(rows: np.ndarray, cfg: DataConfig, rng: np.random.Generator) -> MaskedBatch:
    ins, tgts, poss = [], [], []
    for row in rows:
        i, t, p = apply_mlm_mask(row, cfg, rng)
        ins.append(i)
        tgts.append(t)
        poss.append(p)
    inputs = np.stack(ins)
    return MaskedBatch(inputs, np.stack(tgts), poss, np.asarray(rows) == PAD)


class BatchStream:
    """Endless shuffled, freshly masked batches over a fixed set of sequences.

    Epoch ``e`` visits the sequences in the order of a permutation seeded by
    ``(seed, e)``; batch ``k`` of that epoch is masked with a generator seeded
    by ``(seed, e, k)``. The stream position ``(epoch, cursor)`` is therefore
    all that is needed to resume it.
    """

    def __init__(self, sequences: np.ndarray, cfg: DataConfig, epoch: int = 0, cursor: int = 0):
        if len(sequences) == 0:
            raise DataError("dataset is empty")
        self.sequences = np.asarray(sequences, dtype=np.int64)
        self.cfg = cfg
        self.epoch = epoch
        self.cursor = cursor
        self._order = epoch_order(len(self.sequences), cfg.seed, epoch)

    def state(self) -> tuple[int, int]:
        return self.epoch, self.cursor

    def __iter__(self) -> Iterator[MaskedBatch]:
        return self

    def __next__(self) -> MaskedBatch:
        n = len(self.sequences)
        if self.cursor >= n:
            self.epoch += 1
            self.cursor = 0
            self._order = epoch_order(n, self.cfg.seed, self.epoch)
        start = self.cursor
        idx = self._order[start:start + self.cfg.batch_size]
        self.cursor = start + len(idx)
        rng = make_rng(self.cfg.seed, 2, self.epoch, start)
        return mask_batch(self.sequences[idx], self.cfg, rng)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return make_rng(seed, 1, epoch).permutation(n)


def next_batch(dataset: np.ndarray, cfg: DataConfig, rng: np.random.Generator,
               order: np.ndarray | None = None, start: int = 0) -> MaskedBatch:
    """Mask rows ``order[start:start+B]`` of ``dataset`` (whole dataset order if None)."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    order = np.arange(len(dataset)) if order is None else order
    return mask_batch(np.asarray(dataset)[order[start:start + cfg.batch_size]], cfg, rng)


def epoch_batches(dataset: np.ndarray, cfg: DataConfig, epoch: int = 0) -> list[MaskedBatch]:
    """One full epoch: ``ceil(N / B)`` batches, the last possibly short."""
    stream = BatchStream(dataset, cfg, epoch=epoch)
    n_batches = math.ceil(len(dataset) / cfg.batch_size)
    return [next(stream) for _ in range(n_batches)]


def fixed_eval_batches(dataset: np.ndarray, cfg: DataConfig, seed: int = 12345) -> list[MaskedBatch]:
    """Deterministic masked evaluation set in dataset order, independent of the model."""
    out = []
    rng = make_rng(seed, 3)
    for start in range(0, len(dataset), cfg.batch_size):
        out.append(mask_batch(np.asarray(dataset)[start:start + cfg.batch_size], cfg, rng))
    return out


def cycle_task(n_sequences: int, m: int, words: int = 20, seed: int = 0) -> np.ndarray:
    """Sequences of the arithmetic cycle ``w -> 2 + ((w - 2 + 1) mod words)``.

    Each row starts at a uniformly random word, so any masked id is fixed by
    its unmasked neighbours.
    """
    starts = make_rng(seed, 4).integers(0, words, size=n_sequences)
    return FIRST_WORD + (starts[:, None] + np.arange(m)[None, :]) % words
