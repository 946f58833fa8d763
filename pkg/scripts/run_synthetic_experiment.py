#!/usr/bin/env python3
"""Run every method on a synthetic dataset and print the mean-error table.

    python3 scripts/run_synthetic_experiment.py [--config configs/synthetic.ini] [--jobs N]
"""

import argparse
import sys
from pathlib import Path

from quantbench.cli import main
from quantbench.evaluation import build_comparison, read_records

ROOT = Path(__file__).resolve().parent.parent


def print_table(records_path, measure):
    rep = build_comparison(read_records(records_path), measure)
    width = max(len(m) for m in rep.methods) + 2
    print("dataset".ljust(14) + "".join(m.rjust(width) for m in rep.methods))
    for d in rep.datasets:
        cells = []
        for m in rep.methods:
            mark = {"": "", "dagger": "+", "ddagger": "="}.get(rep.markers.get((d, m), ""), "")
            star = "*" if rep.best[d] == m else ""
            cells.append(f"{rep.means[d, m]:.4f}{star or mark}".rjust(width))
        print(d.ljust(14) + "".join(cells))
    print("(* best, = not significantly worse than best, + 0.001 < p < 0.05)")


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "synthetic.ini"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--output")
    args = parser.parse_args()
    argv = ["run", "--config", args.config, "--jobs", str(args.jobs)]
    if args.output:
        argv += ["--output", args.output]
    code = main(argv)
    if code:
        return code
    out = Path(args.output) if args.output else (Path(args.config).parent / "../results/synthetic").resolve()
    print_table(out / "records.csv", "ae")
    return 0


if __name__ == "__main__":
    sys.exit(run())
