#!/usr/bin/env python3
"""End-to-end demo: generate data, train, run streaming and batch
inference, evaluate, and benchmark — all through the CLI, into one
output directory.

Usage: python scripts/run_pipeline.py --out runs/demo [--steps 200]
"""

import argparse
import sys
from pathlib import Path

from depthstream.cli import main as cli


def run(*argv):
    argv = [str(a) for a in argv]
    print(f"$ depthstream {' '.join(argv)}")
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--frames", type=int, default=48)
    ap.add_argument("--context", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    data, train = out / "data", out / "train"
    run("gen", "--out", data, "--frames", args.frames, "--sequences", 2,
        "--invalid-fraction", "0.05", "--seed", args.seed)
    run("train", "--data", data, "--out", train, "--steps", args.steps,
        "--lr", "5e-2", "--context", args.context, "--seed", args.seed)
    ckpt = train / "model.ckpt"
    run("stream", "--data", data, "--out", out / "stream",
        "--model", ckpt, "--context", args.context)
    run("infer-batch", "--data", data, "--out", out / "batch",
        "--model", ckpt, "--context", args.context)
    for align in ("first", "globalall"):
        run("eval", "--pred", out / "stream", "--gt", data,
            "--out", out / f"eval_{align}", "--align", align)
    run("drift", "--pred", out / "stream", "--gt", data,
        "--out", out / "drift", "--smooth", 4)
    run("bench", "--out", out / "bench", "--frames", 128,
        "--context", args.context, "--seed", args.seed)
    run("check", "--seed", args.seed)
    print(f"all artifacts under {out}")


if __name__ == "__main__":
    main()
