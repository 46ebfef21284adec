"""Regenerate the three Monte Carlo tables into results/tableN/.

    python scripts/reproduce_tables.py            # all tables, 100 replications
    python scripts/reproduce_tables.py 4 --jobs 4
"""

import argparse
import sys

from cmma.cli import main

SIZES = {"2": ["200", "500", "1000"], "3": ["1000"], "4": ["100"]}


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("tables", nargs="*", default=["2", "3", "4"], choices=["2", "3", "4"])
    ap.add_argument("--replications", default="100")
    ap.add_argument("--jobs", default="1")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    status = 0
    for t in args.tables:
        cmd = ["benchmark", "--table", t, "--replications", args.replications, "--jobs", args.jobs]
        status |= main([*cmd, "--n-per", *SIZES[t], "--output", f"{args.out}/table{t}"])
    sys.exit(status)
