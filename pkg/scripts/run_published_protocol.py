#!/usr/bin/env python3
"""Run the full protocol on the tweet datasets, once per model-selection loss.

Expects ``<name>.manifest`` files in DATA_DIR (default ``data/``), as written by
``quantbench convert``. Missing datasets are reported and skipped.

    python3 scripts/run_published_protocol.py [--data DATA_DIR] [--output results] [--m 25] [--jobs N]
"""

import argparse
import sys
import tempfile
from pathlib import Path

from quantbench.cli import main

DATASETS = ("gasp", "hcr", "omd", "sanders", "semeval2013", "semeval2014", "semeval2015",
            "semeval2016", "sst", "wa", "wb")
METHODS = "CC, ACC, PCC, PACC, SLD, HDy, MLPE, E-PACC-Ptr, E-PACC-AE"


def run():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", default="data")
    parser.add_argument("--output", default="results")
    parser.add_argument("--m", type=int, default=25)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--losses", default="ae,rae")
    args = parser.parse_args()

    data = Path(args.data).resolve()
    manifests = [data / f"{d}.manifest" for d in DATASETS if (data / f"{d}.manifest").exists()]
    missing = [d for d in DATASETS if not (data / f"{d}.manifest").exists()]
    if missing:
        print(f"skipping missing datasets: {', '.join(missing)}", file=sys.stderr)
    if not manifests:
        print(f"no manifests found in {data}", file=sys.stderr)
        return 2

    status = 0
    for loss in args.losses.split(","):
        out = Path(args.output).resolve() / f"published-{loss}"
        with tempfile.TemporaryDirectory() as tmp:
            cfg = Path(tmp) / "published.ini"
            cfg.write_text("[run]\n"
                           f"datasets = {', '.join(str(p) for p in manifests)}\n"
                           f"methods = {METHODS}\nloss = {loss}\nseed = {args.seed}\n"
                           f"step = 0.05\nm = {args.m}\nq = 100\nmin_df = 5\noutput = {out}\n")
            argv = ["run", "--config", str(cfg)]
            if args.jobs:
                argv += ["--jobs", str(args.jobs)]
            status = max(status, main(argv))
        print(f"{loss}: results in {out}")
    return status


if __name__ == "__main__":
    sys.exit(run())
