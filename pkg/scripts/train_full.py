"""Full-scale MLM run: 6L/4H/d=256/m=128, batch 32, Adam lr 1e-5.

Long-running and not part of the test suite. Writes metrics and a final
checkpoint; rerun with ``--resume`` to continue an interrupted run.

    python3 scripts/train_full.py --train wiki.train.txt --eval wiki.valid.txt \
        --model pairconnect --K 1000 --steps 100000 --out runs/pc
"""

import argparse
import sys
from pathlib import Path

from pairconnect.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train", required=True)
    ap.add_argument("--eval", required=True)
    ap.add_argument("--model", choices=("pairconnect", "transformer"), default="pairconnect")
    ap.add_argument("--K", default="1000")
    ap.add_argument("--steps", default="100000")
    ap.add_argument("--out", default="runs/full")
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "model.ckpt"
    argv = ["train", "--train", args.train, "--eval", args.eval, "--vocab", str(out / "vocab.tsv"),
            "--metrics", str(out / "metrics.csv"), "--checkpoint", str(ck), "--steps", args.steps]
    if args.resume and ck.exists():
        argv += ["--resume", str(ck)]
    else:
        argv += ["--model", args.model, "--K", args.K, "--L", "6", "--l", "4", "--d", "256",
                 "--d-hidden", "256", "--m", "128", "--batch", "32", "--lr", "1e-5", "--eval-every", "1000"]
    sys.exit(cli_main(argv))


if __name__ == "__main__":
    main()
