"""Feasible region curves for the two-coordinate example at three false-alarm levels.

Usage: python scripts/run_case2.py [--samples N] [--seed S] [extra CLI flags]
Writes results/case2*.csv.
"""

import sys
from pathlib import Path

from secure_estimation.cli import main

OUT = Path(__file__).resolve().parent.parent / "results"

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    raise SystemExit(main(["case2", "--out", str(OUT / "case2.csv"), *sys.argv[1:]]))
