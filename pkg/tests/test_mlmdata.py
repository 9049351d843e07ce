import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairconnect.mlmdata import (FIRST_WORD, IGNORE, MASK, PAD, BatchStream, DataConfig, DataError, Vocab,
                                 apply_mlm_mask, build_vocab, chunk_sequences, cycle_task, epoch_batches,
                                 fixed_eval_batches, mask_count, read_tokens)
from pairconnect.numerics import ConfigError, make_rng


def test_vocab_order_and_ids():
    v = build_vocab("b a c a b a".split())
    assert v.words == ["a", "b", "c"]
    assert v.index == {"a": 2, "b": 3, "c": 4}
    assert v.size == 5
    assert v.encode(["c", "a"]).tolist() == [4, 2]
    assert v.decode([PAD, MASK, 3]) == ["<pad>", "<mask>", "b"]


def test_vocab_ties_are_lexicographic():
    assert build_vocab(["z", "y", "x"]).words == ["x", "y", "z"]


def test_vocab_unknown_words():
    v = build_vocab(["<unk>", "a"])
    assert v.encode(["q"]).tolist() == [v.index["<unk>"]]
    with pytest.raises(DataError, match="'q'"):
        build_vocab(["a"]).encode(["q"])


def test_vocab_errors():
    with pytest.raises(DataError):
        build_vocab([])
    with pytest.raises(DataError):
        Vocab(["a", "a"])


def test_vocab_tsv_round_trip(tmp_path):
    v = build_vocab("the cat sat on the mat".split())
    p = tmp_path / "vocab.tsv"
    v.save_tsv(p)
    assert Vocab.load_tsv(p).words == v.words
    p.write_text("a\t2\nb\t4\n")
    with pytest.raises(DataError):
        Vocab.load_tsv(p)


def test_read_tokens(tmp_path):
    (tmp_path / "a.txt").write_text("one two\nthree\n")
    (tmp_path / "b.txt").write_text("  four ")
    assert read_tokens([tmp_path / "a.txt", tmp_path / "b.txt"]) == ["one", "two", "three", "four"]


def test_chunking():
    got = chunk_sequences(np.arange(2, 9), 3)
    assert got.tolist() == [[2, 3, 4], [5, 6, 7], [8, PAD, PAD]]
    assert chunk_sequences(np.arange(2, 8), 3).shape == (2, 3)
    with pytest.raises(ConfigError):
        chunk_sequences([2, 3], 1)


def test_data_config_validation():
    for bad in (dict(p_tok=0.0), dict(p_tok=1.0), dict(p_seq=1.5), dict(seq_len=1), dict(batch_size=0)):
        with pytest.raises(ConfigError):
            DataConfig(**bad)


def test_mask_count_rounding():
    assert mask_count(20, 0.15) == 3
    assert mask_count(10, 0.15) == 2  # 1.5 rounds up
    assert mask_count(1, 0.15) == 1
    assert mask_count(128, 0.15) == 19


def test_twenty_words_get_three_masks():
    seq = np.arange(FIRST_WORD, FIRST_WORD + 20)
    inputs, targets, pos = apply_mlm_mask(seq, DataConfig(p_seq=1.0), make_rng(0))
    assert len(pos) == 3
    assert (inputs[pos] == MASK).all()
    assert (targets[pos] == seq[pos]).all()
    keep = np.setdiff1d(np.arange(20), pos)
    assert (inputs[keep] == seq[keep]).all() and (targets[keep] == IGNORE).all()


def test_p_seq_zero_masks_nothing():
    seq = np.arange(FIRST_WORD, FIRST_WORD + 10)
    for s in range(20):
        inputs, targets, pos = apply_mlm_mask(seq, DataConfig(p_seq=0.0), make_rng(s))
        assert pos.size == 0 and (inputs == seq).all() and (targets == IGNORE).all()


def test_pad_only_sequence_is_an_error():
    with pytest.raises(DataError):
        apply_mlm_mask(np.full(5, PAD), DataConfig(), make_rng(0))


def test_epoch_has_ceil_batches():
    data = cycle_task(10, 4)
    sizes = [len(b.inputs) for b in epoch_batches(data, DataConfig(seq_len=4, batch_size=4))]
    assert sizes == [4, 4, 2]


def test_epoch_covers_every_sequence_once():
    data = np.arange(FIRST_WORD, FIRST_WORD + 40).reshape(10, 4)
    batches = epoch_batches(data, DataConfig(seq_len=4, batch_size=3, p_seq=0.0))
    seen = np.concatenate([b.inputs[:, 0] for b in batches])
    assert sorted(seen.tolist()) == data[:, 0].tolist()


def test_empty_dataset():
    with pytest.raises(DataError):
        BatchStream(np.zeros((0, 4), dtype=np.int64), DataConfig(seq_len=4))


def test_stream_is_deterministic_and_resumable():
    data = cycle_task(23, 6, seed=1)
    cfg = DataConfig(seq_len=6, batch_size=5, seed=3)
    a = BatchStream(data, cfg)
    full = [next(a) for _ in range(12)]
    b = BatchStream(data, cfg)
    for _ in range(7):
        next(b)
    c = BatchStream(data, cfg, *b.state())
    for x, y in zip(full[7:], [next(c) for _ in range(5)]):
        assert np.array_equal(x.inputs, y.inputs) and np.array_equal(x.targets, y.targets)


def test_fixed_eval_batches_are_fixed():
    data = cycle_task(12, 5)
    cfg = DataConfig(seq_len=5, batch_size=4)
    a, b = fixed_eval_batches(data, cfg), fixed_eval_batches(data, cfg)
    assert all(np.array_equal(x.targets, y.targets) for x, y in zip(a, b))
    for x, rows in zip(a, np.split(data, 3)):
        keep = x.targets == IGNORE
        assert np.array_equal(x.inputs[keep], rows[keep])


def test_cycle_task_rows_follow_the_cycle():
    data = cycle_task(50, 30, words=20, seed=2)
    w = data - FIRST_WORD
    assert ((w[:, 1:] - w[:, :-1]) % 20 == 1).all()
    assert data.min() >= FIRST_WORD and data.max() < FIRST_WORD + 20


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(FIRST_WORD, 60), min_size=1, max_size=40), st.integers(0, 5),
       st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_masking_invariants(words, n_pad, p_tok, seed):
    seq = np.array(words + [PAD] * n_pad)
    cfg = DataConfig(seq_len=max(2, len(seq)), p_tok=p_tok, p_seq=1.0)
    inputs, targets, pos = apply_mlm_mask(seq, cfg, make_rng(seed))
    assert len(pos) == mask_count(len(words), p_tok)
    assert len(set(pos.tolist())) == len(pos)
    assert (seq[pos] >= FIRST_WORD).all()  # never a PAD position
    assert (inputs[pos] == MASK).all() and (targets[pos] == seq[pos]).all()
    rest = np.setdiff1d(np.arange(len(seq)), pos)
    assert (inputs[rest] == seq[rest]).all() and (targets[rest] == IGNORE).all()
