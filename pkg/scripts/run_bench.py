#!/usr/bin/env python3
"""End-to-end benchmark driver: synthesize an oddball dataset, sweep every
configuration with 3-fold cross-validation, and print the comparison table.

This is a thin wrapper over the CLI so a full experiment is one command:

    python scripts/run_bench.py --workdir out/bench01 --seed 7
"""

import argparse
import sys
from pathlib import Path

from klsda.cli import main as cli


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", required=True, help="directory for all outputs")
    ap.add_argument("--seed", type=int, default=7, help="data seed")
    ap.add_argument("--cv-seed", type=int, default=11, help="fold seed")
    ap.add_argument("--targets", type=int, default=100)
    ap.add_argument("--nontargets", type=int, default=500)
    ap.add_argument("--amplitude", type=float, default=1.0)
    ap.add_argument("--t-max", type=float, default=50.0)
    ap.add_argument("--folds", type=int, default=3)
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    data = work / "data"

    code = cli(["synth", "--targets", str(args.targets),
                "--nontargets", str(args.nontargets),
                "--amplitude", str(args.amplitude),
                "--seed", str(args.seed), "--out", str(data)])
    if code != 0:
        return code

    code = cli(["klmap", "--data", str(data), "--svg",
                "--out", str(work / "jmap")])
    if code != 0:
        return code

    return cli(["bench", "--data", str(data), "--folds", str(args.folds),
                "--seed", str(args.cv_seed), "--t-max", str(args.t_max),
                "--out", str(work / "bench")])


if __name__ == "__main__":
    sys.exit(run())
