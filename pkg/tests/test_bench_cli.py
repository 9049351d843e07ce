import csv

import numpy as np
import pytest

from pairconnect import bench
from pairconnect.bench import BENCH_HEADER, BenchConfig, bench_model_config, work_counts, write_bench_csv
from pairconnect.cli import main, run_ablation
from pairconnect.layers import ModelConfig
from pairconnect.mlmdata import cycle_task
from pairconnect.models import init_model
from pairconnect.numerics import ConfigError
from pairconnect.training import MetricsLog, TrainConfig

SMALL = ModelConfig(vocab_size=40, layers=2, heads=2, d=16, d_hidden=16, table_size=100, seq_len=16)


@pytest.mark.parametrize("bad", [dict(iters=29), dict(warmup=4), dict(reps=4), dict(seq_len=1),
                                 dict(batch_size=0)])
def test_bench_config_minimums(bad):
    with pytest.raises(ConfigError):
        BenchConfig(**bad)


def test_work_counts_are_deterministic():
    model = init_model(bench_model_config(SMALL))
    toks = bench.synthetic_tokens(model.config, BenchConfig(seq_len=16))
    a, b = work_counts(model, toks), work_counts(model, toks)
    assert a.total_flops == b.total_flops and a.lookups == b.lookups


def test_flops_do_not_depend_on_table_size():
    counts = []
    for K in (100, 1000, 10000):
        model = init_model(bench_model_config(SMALL, table_size=K))
        ops = work_counts(model, bench.synthetic_tokens(model.config, BenchConfig(seq_len=16)))
        counts.append((ops.total_flops, ops.lookups["pair"]))
    assert len(set(counts)) == 1
    assert counts[0][1] == 2 * 2 * 16 * 16


def test_bench_model_config_is_inference_copy():
    c = bench_model_config(SMALL, kind="transformer")
    assert c.dropout == 0.0 and c.dtype == "float32" and c.kind == "transformer" and c.d == 16


def test_bench_runs_and_writes_csv(tmp_path):
    cfg = BenchConfig(seq_len=16, iters=30, warmup=5, reps=5)
    deep = init_model(bench_model_config(SMALL))
    shallow = init_model(bench_model_config(SMALL, layers=0))
    reps = bench.bench_many({"deep": deep, "shallow": shallow}, cfg)
    assert len(reps["deep"].runs) == 5
    assert reps["shallow"].samples_per_sec > reps["deep"].samples_per_sec
    assert reps["deep"].threads == 1
    write_bench_csv(list(reps.values()), tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert tuple(rows[0]) == BENCH_HEADER and len(rows) == 3
    assert rows[1][0] == "pairconnect" and rows[1][5] == "100"


def test_thread_env_is_validated(monkeypatch):
    monkeypatch.setenv(bench.THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        bench.bench_throughput(init_model(bench_model_config(SMALL, layers=0)), BenchConfig(seq_len=16))


# cli -----------------------------------------------------------------------------


def test_no_args_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_command(capsys):
    assert main(["train", "--no-such-flag", "1"]) == 2
    assert main(["frobnicate"]) == 2


def test_bad_checkpoint_is_a_one_line_error(tmp_path, capsys):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"hello world, not a checkpoint")
    assert main(["eval", "--checkpoint", str(p), "--task", "cycle"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and "magic" in err


def test_missing_data_source(capsys):
    assert main(["train", "--steps", "1"]) == 1
    assert "--task" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--model", "transformer"]) == 0
    assert "ok" in capsys.readouterr().out


def test_collide_command(capsys):
    assert main(["collide", "--k", "50", "--heads", "2", "--samples", "20000"]) == 0
    out = capsys.readouterr().out
    assert "head 1 collision rate" in out and "all-heads" in out


def test_train_resume_eval_round_trip(tmp_path, capsys):
    common = ["--task", "cycle", "--task-size", "32", "--m", "6", "--L", "1", "--l", "1", "--d", "8",
              "--d-hidden", "8", "--K", "31", "--batch", "8", "--eval-every", "4", "--wall-clock", "off"]
    full, part = tmp_path / "full.csv", tmp_path / "part.csv"
    assert main(["train", *common, "--steps", "8", "--metrics", str(full)]) == 0
    ck = tmp_path / "ck.bin"
    assert main(["train", *common, "--steps", "4", "--metrics", str(part), "--checkpoint", str(ck)]) == 0
    assert main(["train", "--resume", str(ck), "--task", "cycle", "--task-size", "32", "--steps", "8",
                 "--metrics", str(part)]) == 0
    assert full.read_bytes() == part.read_bytes()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ck), "--task", "cycle", "--task-size", "32"]) == 0
    assert capsys.readouterr().out.startswith("eval_loss ")


def test_train_from_text_files(tmp_path):
    words = " ".join(f"w{i % 7}" for i in range(300))
    (tmp_path / "train.txt").write_text(words)
    (tmp_path / "eval.txt").write_text(words[:200])
    vocab = tmp_path / "vocab.tsv"
    out = tmp_path / "m.csv"
    assert main(["train", "--train", str(tmp_path / "train.txt"), "--eval", str(tmp_path / "eval.txt"),
                 "--vocab", str(vocab), "--m", "8", "--L", "1", "--d", "8", "--d-hidden", "8", "--l", "2",
                 "--K", "50", "--steps", "3", "--batch", "4", "--metrics", str(out)]) == 0
    assert vocab.exists() and len(MetricsLog.read_csv(out).losses("train")) == 3


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("m = 6\nL = 1\nl = 1\nd = 8\nd_hidden = 8\nK = 31\nbatch = 8\nsteps = 50\n")
    assert main(["train", "--config", str(cfg), "--steps", "2", "--task", "cycle", "--task-size", "16"]) == 0
    assert capsys.readouterr().out.startswith("step 2 ")


def test_ablate_hash_csv(tmp_path):
    out = tmp_path / "ablate.csv"
    assert main(["ablate-hash", "--task", "cycle", "--task-size", "16", "--m", "6", "--L", "1", "--l", "1",
                 "--d", "8", "--d-hidden", "8", "--batch", "8", "--steps", "2", "--k", "10,40",
                 "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["hash_size", "dataset", "test_loss"]
    assert [r[0] for r in rows[1:]] == ["10", "40"] and rows[1][1] == "cycle"


def test_run_ablation_multiple_datasets():
    cfg = TrainConfig.from_flat(dict(vocab_size=22, L=1, l=1, d=8, d_hidden=8, m=6, batch=4, steps=1))
    d = (cycle_task(8, 6), cycle_task(8, 6, seed=1))
    rows = run_ablation(cfg, {"a": d, "b": d}, [7])
    assert rows[0][:2] == [7, "a"] and rows[0][3] == "b" and np.isfinite(rows[0][2])
