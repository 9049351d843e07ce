"""Hash-size ablation: train PairConnect at each K and report test loss.

Each dataset is a ``name=train.txt:test.txt`` argument; with none given the
synthetic cycle task is used. Output columns are ``hash_size`` followed by a
``dataset,test_loss`` pair per dataset.

    python3 scripts/ablate_hash.py ptb=ptb.train.txt:ptb.test.txt --steps 20000
"""

import argparse
import csv
import sys

from pairconnect.cli import run_ablation
from pairconnect.mlmdata import build_vocab, chunk_sequences, cycle_task, read_tokens
from pairconnect.training import TrainConfig


def load(arg, m):
    name, paths = arg.split("=", 1)
    train_p, test_p = paths.split(":")
    tokens = read_tokens(train_p)
    vocab = build_vocab(tokens + ["<unk>"])
    train = chunk_sequences(vocab.encode(tokens), m)
    test = chunk_sequences(vocab.encode(read_tokens(test_p)), m)
    return name, train, test, vocab.size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("datasets", nargs="*")
    ap.add_argument("--k", default="100,500,1000,5000,10000")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--lr", type=float, default=1e-5)
    ap.add_argument("--out")
    args = ap.parse_args()

    base = dict(m=args.m, steps=args.steps, lr=args.lr, wall_clock="off")
    if not args.datasets:
        base.update(m=16, L=1, l=1, d=32, d_hidden=32, lr=1e-3, dropout=0.0, vocab_size=22)
        cfg = TrainConfig.from_flat(base)
        data = {"cycle": (cycle_task(2000, 16), cycle_task(200, 16, seed=1))}
    else:
        loaded = [load(s, args.m) for s in args.datasets]
        # one vocabulary size for every dataset keeps the model shape fixed
        cfg = TrainConfig.from_flat({**base, "vocab_size": max(v for *_, v in loaded)})
        data = {name: (tr, te) for name, tr, te, _ in loaded}
    rows = run_ablation(cfg, data, [int(k) for k in args.k.split(",")])
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["hash_size"] + ["dataset", "test_loss"] * len(data))
    w.writerows(rows)
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
