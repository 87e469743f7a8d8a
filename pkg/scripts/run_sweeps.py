#!/usr/bin/env python3
"""Hyperparameter sweeps of the encapsulated pipeline: block insertion
timestep, block noising strength, block step count, and query blending rate.

Usage:
  python scripts/run_sweeps.py --out results/sweeps [--count 20] [--seed 0]
"""

import argparse
import sys
from pathlib import Path

from evs.cli import main as evs_main


def run(argv):
    code = evs_main([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/sweeps")
    parser.add_argument("--count", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    out = Path(args.out)

    run(["gen", "--out", out / "dataset", "--seed", args.seed,
         "--set", f"dataset.count={args.count}"])

    sdedit = ["--set", "pipeline.block_mode=sdedit", "--set", "pipeline.injection=null"]
    for axis, grid in (("t_T2V", "5,10,15,20"), ("t_V", "2,4,6,8"), ("n_V", "1,2,3,4")):
        run(["sweep", axis, "--grid", grid, "--dataset", out / "dataset",
             "--out", out / f"sweep_{axis}", "--seed", args.seed, *sdedit])

    # gamma only matters for the injection block; train a net first
    run(["train", "--out", out / "net", "--seed", args.seed])
    run(["sweep", "gamma", "--grid", "0.0,0.25,0.5,0.8,1.0",
         "--dataset", out / "dataset", "--out", out / "sweep_gamma",
         "--seed", args.seed, "--set", f"net.weights={out / 'net' / 'net.evsnet'}"])
    print(f"sweeps written under {out}")


if __name__ == "__main__":
    main()
