"""Throughput of PairConnect vs the Transformer at 6L/4H/d=256/m=128, batch 1.

Also sweeps K over {100, 1000, 10000} and writes every point to a CSV.
Set PAIRCONNECT_BENCH_THREADS to change the thread count (default 1).

    python3 scripts/bench_throughput.py --out bench.csv
"""

import argparse

from pairconnect.bench import BenchConfig, bench_many, bench_model_config, write_bench_csv
from pairconnect.layers import ModelConfig
from pairconnect.models import init_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="bench.csv")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--retrieval", choices=("copy", "fused"), default="copy")
    args = ap.parse_args()

    base = ModelConfig(vocab_size=10002, layers=6, heads=4, d=256, d_hidden=256, seq_len=128,
                       retrieval=args.retrieval)
    models = {"transformer": init_model(bench_model_config(base, kind="transformer"))}
    for K in (100, 1000, 10000):
        models[f"pairconnect K={K}"] = init_model(bench_model_config(base, table_size=K))
    reports = bench_many(models, BenchConfig(reps=args.reps, iters=args.iters))
    for label, r in reports.items():
        print(f"{label:22s} median {r.samples_per_sec:8.3f}/s  runs {[round(x, 2) for x in r.runs]}")
    t = reports["transformer"].samples_per_sec
    print(f"ratio at K=1000: {reports['pairconnect K=1000'].samples_per_sec / t:.3f}")
    write_bench_csv(list(reports.values()), args.out)


if __name__ == "__main__":
    main()
