"""Feasible region for the single-coordinate Gaussian example.

Usage: python scripts/run_case1.py [--samples N] [--seed S] [extra CLI flags]
Writes results/case1*.csv.
"""

import sys
from pathlib import Path

from secure_estimation.cli import main

OUT = Path(__file__).resolve().parent.parent / "results"

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    raise SystemExit(main(["case1", "--out", str(OUT / "case1.csv"), *sys.argv[1:]]))
